//! Versioned JSON network files.
//!
//! Layout: `{version, mode, input_dim, output_dim, width, depth, layers}`
//! where each layer is `{rows, cols, weights, bias}` with row-major dense
//! weights. Rational mode encodes every value as a `"p/q"` string in lowest
//! terms; f64 mode encodes plain JSON numbers. Both round-trip bit-exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{AffineLayer, ReluNet};
use crate::scalar::{rat_from_f64, rat_from_str, rat_is_f64_exact, rat_to_f64, rat_to_str, ModeTag, Rat};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetFile {
    version: u32,
    mode: String,
    input_dim: usize,
    output_dim: usize,
    width: Option<usize>,
    depth: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<WeightVal>,
    bias: Vec<WeightVal>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WeightVal {
    Num(f64),
    Str(String),
}

fn encode(v: &Rat, mode: ModeTag) -> Result<WeightVal> {
    match mode {
        ModeTag::Rational => Ok(WeightVal::Str(rat_to_str(v))),
        ModeTag::F64 => {
            if !rat_is_f64_exact(v) {
                return Err(Error::invalid(
                    "weight not exactly representable in f64; serialize in rational mode",
                ));
            }
            Ok(WeightVal::Num(rat_to_f64(v)))
        }
    }
}

fn decode(v: &WeightVal, mode: ModeTag) -> Result<Rat> {
    match (v, mode) {
        (WeightVal::Str(s), ModeTag::Rational) => rat_from_str(s),
        (WeightVal::Num(x), ModeTag::F64) => rat_from_f64(*x),
        (WeightVal::Num(_), ModeTag::Rational) => {
            Err(Error::malformed("rational-mode file contains a bare number"))
        }
        (WeightVal::Str(_), ModeTag::F64) => Err(Error::malformed("f64-mode file contains a string")),
    }
}

/// Serialize a network in the given weight encoding.
pub fn serialize(net: &ReluNet, mode: ModeTag) -> Result<Vec<u8>> {
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            let mut weights = Vec::with_capacity(l.rows() * l.cols());
            for r in 0..l.rows() {
                for c in 0..l.cols() {
                    weights.push(encode(&l.get(r, c), mode)?);
                }
            }
            let bias = (0..l.rows()).map(|r| encode(l.bias(r), mode)).collect::<Result<_>>()?;
            Ok(LayerFile {
                rows: l.rows(),
                cols: l.cols(),
                weights,
                bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = NetFile {
        version: FORMAT_VERSION,
        mode: mode.as_str().to_string(),
        input_dim: net.input_dim(),
        output_dim: net.output_dim(),
        width: net.width(),
        depth: net.depth(),
        layers,
    };
    serde_json::to_vec_pretty(&file).map_err(|e| Error::malformed(e.to_string()))
}

/// Parse a network file, validating version, mode, and dimension chaining.
pub fn deserialize(bytes: &[u8]) -> Result<(ReluNet, ModeTag)> {
    let file: NetFile =
        serde_json::from_slice(bytes).map_err(|e| Error::malformed(format!("bad network file: {e}")))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::malformed(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let mode = ModeTag::parse(&file.mode)?;
    if file.layers.is_empty() {
        return Err(Error::malformed("network file has no layers"));
    }
    if file.depth != file.layers.len() - 1 {
        return Err(Error::malformed("depth field disagrees with layer count"));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for lf in &file.layers {
        if lf.weights.len() != lf.rows * lf.cols {
            return Err(Error::malformed("weights length is not rows*cols"));
        }
        if lf.bias.len() != lf.rows {
            return Err(Error::malformed("bias length is not rows"));
        }
        let w: Vec<Rat> = lf.weights.iter().map(|v| decode(v, mode)).collect::<Result<_>>()?;
        let b: Vec<Rat> = lf.bias.iter().map(|v| decode(v, mode)).collect::<Result<_>>()?;
        layers.push(AffineLayer::from_dense(lf.rows, lf.cols, &w, &b));
    }
    let net = ReluNet::from_layers(layers, file.width)?;
    if net.input_dim() != file.input_dim || net.output_dim() != file.output_dim {
        return Err(Error::malformed("declared input/output dims disagree with layers"));
    }
    Ok((net, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, rat_int, DEFAULT_PRECISION_BITS};

    fn sample_net() -> ReluNet {
        let a0 = AffineLayer::from_dense(
            2,
            1,
            &[rat_int(1), rat_int(-1)],
            &[rat(1, 3), rat(-2, 7)],
        );
        let a1 = AffineLayer::from_dense(1, 2, &[rat_int(2), rat_int(3)], &[rat(5, 11)]);
        ReluNet::from_layers(vec![a0, a1], Some(2)).unwrap()
    }

    #[test]
    fn rational_round_trip_is_lossless() {
        let net = sample_net();
        let bytes = serialize(&net, ModeTag::Rational).unwrap();
        let (back, mode) = deserialize(&bytes).unwrap();
        assert_eq!(mode, ModeTag::Rational);
        assert_eq!(back, net);
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let a = AffineLayer::from_dense(
            1,
            1,
            &[rat_from_f64(0.1).unwrap()],
            &[rat_from_f64(-3.7e-11).unwrap()],
        );
        let net = ReluNet::affine(a);
        let bytes = serialize(&net, ModeTag::F64).unwrap();
        let (back, mode) = deserialize(&bytes).unwrap();
        assert_eq!(mode, ModeTag::F64);
        assert_eq!(back, net);
    }

    #[test]
    fn f64_mode_rejects_inexact_weights() {
        let net = sample_net(); // contains 1/3
        assert!(serialize(&net, ModeTag::F64).is_err());
    }

    #[test]
    fn hand_written_fixture_parses() {
        // Depth-1 scalar net computing 2*max(0, x - 1/2) + 1/4.
        let text = r#"{
            "version": 1,
            "mode": "rational",
            "input_dim": 1,
            "output_dim": 1,
            "width": 1,
            "depth": 1,
            "layers": [
                {"rows": 1, "cols": 1, "weights": ["1/1"], "bias": ["-1/2"]},
                {"rows": 1, "cols": 1, "weights": ["2/1"], "bias": ["1/4"]}
            ]
        }"#;
        let (net, _) = deserialize(text.as_bytes()).unwrap();
        assert_eq!(net.depth(), 1);
        let y = net.eval_rat(&[rat_int(2)], DEFAULT_PRECISION_BITS).unwrap();
        assert_eq!(y[0], rat(13, 4));
        let y0 = net.eval_rat(&[rat_int(0)], DEFAULT_PRECISION_BITS).unwrap();
        assert_eq!(y0[0], rat(1, 4));
    }

    #[test]
    fn malformed_and_version_errors() {
        assert!(deserialize(b"not json").is_err());
        let wrong_version = r#"{"version": 2, "mode": "rational", "input_dim": 1,
            "output_dim": 1, "width": null, "depth": 0,
            "layers": [{"rows":1,"cols":1,"weights":["1/1"],"bias":["0/1"]}]}"#;
        assert!(deserialize(wrong_version.as_bytes()).is_err());
        let bad_mode = r#"{"version": 1, "mode": "decimal", "input_dim": 1,
            "output_dim": 1, "width": null, "depth": 0,
            "layers": [{"rows":1,"cols":1,"weights":["1/1"],"bias":["0/1"]}]}"#;
        assert!(deserialize(bad_mode.as_bytes()).is_err());
    }
}

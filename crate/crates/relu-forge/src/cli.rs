//! Command-line entry points: build sparse-vector networks, verify network
//! files against their sources, run rate experiments, and convert vectors to
//! and from their packed encodings.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error, 3 resource
//! or precision budget exceeded. Every command is deterministic under a
//! fixed seed; experiment outputs embed the seed and a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::approx::embedding_satisfied;
use crate::error::{Error, Result};
use crate::funcs::TargetFunction;
use crate::net::F64Net;
use crate::pipeline::{build_approximant, fit_rate, measure_lp_error, RateFit, SampleScheme};
use crate::scalar::{rat_int, rat_to_f64, ModeTag, DEFAULT_PRECISION_BITS, PRECISION_BITS_ENV};
use crate::serialize;
use crate::sparse::{
    decode, encode_large_norm, encode_small_norm, sparse_vector_net, theorem_depth_scale,
    BlockEncoding, Regime, SparseIntVector,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "relu-forge", version, about = "Constructive deep ReLU network toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build the network representation of a sparse integer vector.
    BuildSparse(BuildSparseArgs),
    /// Re-check a network file against the vector or function it encodes.
    Verify(VerifyArgs),
    /// Run an approximation-rate experiment and emit CSV plus a manifest.
    Rates(RatesArgs),
    /// Encode an integer vector into a hex-packed block encoding.
    EncodeVector(EncodeArgs),
    /// Decode a hex-packed block encoding back into an integer vector.
    DecodeVector(DecodeArgs),
}

#[derive(Args, Debug)]
struct BuildSparseArgs {
    /// JSON file holding an integer array.
    #[arg(long)]
    vector: PathBuf,
    /// Output network file.
    #[arg(long)]
    out: PathBuf,
    /// Declared l1 bound (defaults to the vector's own l1 norm).
    #[arg(long)]
    bound: Option<i64>,
    /// Weight encoding of the output file.
    #[arg(long, default_value = "rational")]
    mode: String,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Network file to verify.
    #[arg(long)]
    net: PathBuf,
    /// Vector the network is supposed to reproduce at 1..=N.
    #[arg(long)]
    vector: Option<PathBuf>,
    /// Declared l1 bound for the vector (defaults to its l1 norm).
    #[arg(long)]
    bound: Option<i64>,
    /// Named function the network is supposed to approximate.
    #[arg(long)]
    function: Option<String>,
    /// Sup-error tolerance for function verification.
    #[arg(long)]
    tol: Option<f64>,
    /// Sample count for function verification.
    #[arg(long, default_value_t = 2048)]
    samples: usize,
    /// Evaluation mode: rational (exact) or f64.
    #[arg(long, default_value = "rational")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RatesArgs {
    /// Registered target function name.
    #[arg(long)]
    function: String,
    /// Claimed smoothness order.
    #[arg(long)]
    s: f64,
    /// Error norm exponent ("inf" allowed).
    #[arg(long)]
    p: String,
    /// Smoothness norm exponent ("inf" allowed).
    #[arg(long)]
    q: String,
    /// Input dimension.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Comma-separated resolutions, e.g. 8,16,32,64.
    #[arg(long = "n-grid")]
    n_grid: String,
    /// Output CSV path; a .manifest.json is written alongside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample budget per measurement.
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    /// Evaluation mode (f64 is the experiment mode; rational refuses large runs).
    #[arg(long, default_value = "f64")]
    mode: String,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    vector: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bound: Option<i64>,
    /// small, large, or auto (pick by comparing N and M).
    #[arg(long, default_value = "auto")]
    regime: String,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    encoding: PathBuf,
    /// Vector length.
    #[arg(long)]
    n: usize,
    /// Declared l1 bound (fixes the field widths).
    #[arg(long)]
    bound: i64,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point for the binary: parse `std::env::args` and run.
pub fn run() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    run_with_args(&args)
}

/// Testable entry point; returns the process exit code.
pub fn run_with_args<S: AsRef<str>>(args: &[S]) -> i32 {
    let parsed = match Cli::try_parse_from(args.iter().map(|s| s.as_ref())) {
        Ok(p) => p,
        Err(e) => {
            // Help/version requests are not errors.
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match parsed.cmd {
        Cmd::BuildSparse(a) => cmd_build_sparse(&a),
        Cmd::Verify(a) => cmd_verify(&a),
        Cmd::Rates(a) => cmd_rates(&a),
        Cmd::EncodeVector(a) => cmd_encode(&a),
        Cmd::DecodeVector(a) => cmd_decode(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::PrecisionBudget { .. } | Error::ResourceLimit(_) => EXIT_RESOURCE,
        _ => EXIT_INPUT,
    }
}

fn precision_bits() -> u64 {
    std::env::var(PRECISION_BITS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_PRECISION_BITS)
}

fn parse_norm(s: &str) -> Result<f64> {
    match s {
        "inf" | "Inf" | "INF" | "infinity" => Ok(f64::INFINITY),
        other => {
            let v: f64 = other
                .parse()
                .map_err(|_| Error::invalid(format!("bad norm exponent {other:?}")))?;
            if v >= 1.0 {
                Ok(v)
            } else {
                Err(Error::invalid("norm exponent must be at least 1"))
            }
        }
    }
}

fn read_vector(path: &Path, bound: Option<i64>) -> Result<SparseIntVector> {
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<i64> =
        serde_json::from_str(&text).map_err(|e| Error::malformed(format!("vector file: {e}")))?;
    match bound {
        Some(m) => SparseIntVector::new(entries, m),
        None => SparseIntVector::tight(entries),
    }
}

fn cmd_build_sparse(a: &BuildSparseArgs) -> Result<i32> {
    let mode = ModeTag::parse(&a.mode)?;
    let x = read_vector(&a.vector, a.bound)?;
    let build = sparse_vector_net(&x)?;
    let bytes = serialize::serialize(&build.net, mode)?;
    std::fs::write(&a.out, bytes)?;
    let scale = theorem_depth_scale(x.len(), x.bound());
    let depth = build.net.depth();
    println!(
        "built sparse net: N={} M={} regime={} threshold={} depth={} bound={:.1} depth/scale={:.2}",
        x.len(),
        x.bound(),
        build.regime,
        build.threshold,
        depth,
        build.depth_bound,
        depth as f64 / scale
    );
    if (depth as f64) <= build.depth_bound {
        println!("depth audit: PASS ({depth} <= {:.1})", build.depth_bound);
        Ok(EXIT_OK)
    } else {
        println!("depth audit: FAIL ({depth} > {:.1})", build.depth_bound);
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let mode = ModeTag::parse(&a.mode)?;
    let bytes = std::fs::read(&a.net)?;
    let (net, _file_mode) = serialize::deserialize(&bytes)?;
    if mode == ModeTag::F64 && !net.is_f64_exact() {
        eprintln!(
            "refusing f64 verification: network weights exceed exact f64 range; rerun with --mode rational"
        );
        return Ok(EXIT_INPUT);
    }
    match (&a.vector, &a.function) {
        (Some(vpath), None) => {
            let x = read_vector(vpath, a.bound)?;
            let cap = precision_bits();
            let mut failures = 0usize;
            println!("index  expected  got  ok");
            for (i, &want) in x.entries().iter().enumerate() {
                let input = rat_int(i as i64 + 1);
                let got = match mode {
                    ModeTag::Rational => net.eval_rat(&[input], cap)?[0].clone(),
                    ModeTag::F64 => crate::scalar::rat_from_f64(
                        F64Net::new(&net).eval(&[(i + 1) as f64])[0],
                    )?,
                };
                let ok = got == rat_int(want);
                if !ok || i < 5 {
                    println!("{:>5}  {:>8}  {}  {}", i + 1, want, rat_to_f64(&got), if ok { "yes" } else { "NO" });
                }
                failures += !ok as usize;
            }
            if failures == 0 {
                println!("verify: PASS ({} entries)", x.len());
                Ok(EXIT_OK)
            } else {
                println!("verify: FAIL ({failures} of {} entries differ)", x.len());
                Ok(EXIT_VERIFY_FAILED)
            }
        }
        (None, Some(fname)) => {
            let tol = a
                .tol
                .ok_or_else(|| Error::invalid("function verification needs --tol"))?;
            let f = TargetFunction::by_name(fname, net.input_dim())?;
            let report = measure_lp_error(
                &f,
                &net,
                f64::INFINITY,
                SampleScheme::DenseGridMax {
                    points_per_axis: a.samples.max(2),
                },
                a.seed,
            )?;
            println!("sup error over {} samples: {}", a.samples, report.error);
            if report.error <= tol {
                println!("verify: PASS (<= {tol})");
                Ok(EXIT_OK)
            } else {
                println!("verify: FAIL (> {tol})");
                Ok(EXIT_VERIFY_FAILED)
            }
        }
        _ => Err(Error::invalid("pass exactly one of --vector or --function")),
    }
}

#[derive(Serialize)]
struct ExperimentManifest {
    command: String,
    function: String,
    s: f64,
    p: String,
    q: String,
    d: usize,
    n_grid: Vec<u64>,
    samples: usize,
    seed: u64,
    mode: String,
    toolkit_version: String,
    out_csv: String,
    fit: RateFit,
}

fn cmd_rates(a: &RatesArgs) -> Result<i32> {
    let p = parse_norm(&a.p)?;
    let q = parse_norm(&a.q)?;
    let mode = ModeTag::parse(&a.mode)?;
    if !embedding_satisfied(a.s, p, q, a.d) {
        eprintln!(
            "embedding violated: need 1/q - 1/p < s/d, got {} - {} >= {}",
            inv_str(q),
            inv_str(p),
            a.s / a.d as f64
        );
        return Ok(EXIT_INPUT);
    }
    if q > p {
        eprintln!("construction requires q <= p");
        return Ok(EXIT_INPUT);
    }
    let ns: Vec<u64> = a
        .n_grid
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("bad resolution {t:?}")))
        })
        .collect::<Result<_>>()?;
    if ns.is_empty() {
        return Err(Error::invalid("empty resolution grid"));
    }
    let f = TargetFunction::by_name(&a.function, a.d)?.with_claim(a.s, q);
    let mut csv = String::from("n,depth,width,params,p,error,ci_lo,ci_hi,seed\n");
    let mut points = Vec::new();
    for &n in &ns {
        let approx = build_approximant(&f, n, a.s, p, q)?;
        if mode == ModeTag::F64 && approx.max_packed_bits > 50 {
            return Err(Error::ResourceLimit(format!(
                "packed bit strings of {} bits exceed exact f64 range; rerun in rational mode",
                approx.max_packed_bits
            )));
        }
        let scheme = if p.is_infinite() {
            SampleScheme::DenseGridMax {
                points_per_axis: sample_axis(a.samples, a.d),
            }
        } else {
            SampleScheme::StratifiedMonteCarlo { samples: a.samples }
        };
        let rep = measure_lp_error(&f, &approx.net, p, scheme, a.seed)?;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            n,
            rep.depth,
            rep.width.map(|w| w.to_string()).unwrap_or_default(),
            rep.params,
            a.p,
            rep.error,
            rep.ci_lo,
            rep.ci_hi,
            rep.seed
        )
        .expect("string write");
        println!(
            "n={n}: depth={} width={:?} error={}",
            rep.depth, rep.width, rep.error
        );
        points.push((rep.depth as f64, rep.error.max(1e-300)));
    }
    let fit = fit_rate(&points)?;
    println!("fitted slope {:.3} (r2 {:.4})", fit.slope, fit.r2);
    std::fs::write(&a.out, csv.as_bytes())?;
    let manifest = ExperimentManifest {
        command: "rates".into(),
        function: a.function.clone(),
        s: a.s,
        p: a.p.clone(),
        q: a.q.clone(),
        d: a.d,
        n_grid: ns,
        samples: a.samples,
        seed: a.seed,
        mode: mode.as_str().into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        out_csv: a.out.display().to_string(),
        fit,
    };
    let mpath = manifest_path(&a.out);
    std::fs::write(
        &mpath,
        serde_json::to_vec_pretty(&manifest).map_err(|e| Error::malformed(e.to_string()))?,
    )?;
    println!("wrote {} and {}", a.out.display(), mpath.display());
    Ok(EXIT_OK)
}

fn sample_axis(samples: usize, d: usize) -> usize {
    ((samples as f64).powf(1.0 / d as f64).ceil() as usize).max(2)
}

fn inv_str(p: f64) -> String {
    if p.is_infinite() {
        "0".into()
    } else {
        format!("1/{p}")
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn cmd_encode(a: &EncodeArgs) -> Result<i32> {
    let x = read_vector(&a.vector, a.bound)?;
    let regime = match a.regime.as_str() {
        "small" => Regime::SmallNorm,
        "large" => Regime::LargeNorm,
        "auto" => {
            if x.len() as i64 >= x.bound() {
                Regime::SmallNorm
            } else {
                Regime::LargeNorm
            }
        }
        other => return Err(Error::invalid(format!("unknown regime {other:?}"))),
    };
    let enc = match regime {
        Regime::SmallNorm => encode_small_norm(&x)?,
        Regime::LargeNorm => encode_large_norm(&x)?,
    };
    std::fs::write(&a.out, encoding_to_hex(&enc))?;
    println!(
        "encoded N={} M={} regime={} blocks={} bits={}",
        x.len(),
        x.bound(),
        enc.regime,
        enc.block_count(),
        enc.to_bits().len()
    );
    Ok(EXIT_OK)
}

fn cmd_decode(a: &DecodeArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.encoding)?;
    let enc = encoding_from_hex(text.trim(), a.n, a.bound)?;
    let x = decode(&enc, a.n)?;
    std::fs::write(
        &a.out,
        serde_json::to_vec(&x.entries().to_vec()).map_err(|e| Error::malformed(e.to_string()))?,
    )?;
    println!("decoded {} entries, l1={}", x.len(), x.l1());
    Ok(EXIT_OK)
}

/// Hex file format: one header byte (00 small-norm, 01 large-norm) followed
/// by the block bits packed most-significant-first and zero-padded to bytes.
pub fn encoding_to_hex(enc: &BlockEncoding) -> String {
    let bits = enc.to_bits();
    let mut bytes = vec![match enc.regime {
        Regime::SmallNorm => 0u8,
        Regime::LargeNorm => 1u8,
    }];
    for chunk in bits.chunks(8) {
        let mut b = 0u8;
        for (i, &bit) in chunk.iter().enumerate() {
            b |= (bit as u8) << (7 - i);
        }
        bytes.push(b);
    }
    let mut out = String::with_capacity(bytes.len() * 2 + 1);
    for b in bytes {
        write!(out, "{b:02x}").expect("string write");
    }
    out.push('\n');
    out
}

pub fn encoding_from_hex(text: &str, n: usize, m: i64) -> Result<BlockEncoding> {
    if text.len() < 2 || text.len() % 2 != 0 {
        return Err(Error::malformed("hex encoding must be whole bytes"));
    }
    let bytes: Vec<u8> = (0..text.len() / 2)
        .map(|i| {
            u8::from_str_radix(&text[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::malformed("bad hex digit"))
        })
        .collect::<Result<_>>()?;
    let regime = match bytes[0] {
        0 => Regime::SmallNorm,
        1 => Regime::LargeNorm,
        other => return Err(Error::malformed(format!("unknown regime header {other:#x}"))),
    };
    let mut bits = Vec::with_capacity((bytes.len() - 1) * 8);
    for b in &bytes[1..] {
        for i in 0..8 {
            bits.push((b >> (7 - i)) & 1 == 1);
        }
    }
    BlockEncoding::from_bits(regime, n, m, &bits)
}

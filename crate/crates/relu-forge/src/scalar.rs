//! Exact-rational and float64 scalar backends.
//!
//! All network weights are stored as arbitrary-precision rationals, which keeps
//! every construction exact. Evaluation can run either in exact mode (the
//! correctness reference; bit-level constructions need resolution far below
//! what f64 offers) or in f64 mode for bulk error measurements.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use std::fmt;

use crate::error::{Error, Result};

/// Arbitrary-precision rational, the weight type of every network.
pub type Rat = BigRational;

/// Default cap on denominator bit length in exact evaluation.
pub const DEFAULT_PRECISION_BITS: u64 = 4096;

/// Env var that overrides the rational denominator cap in the CLI.
pub const PRECISION_BITS_ENV: &str = "RELU_FORGE_PRECISION_BITS";

/// Shorthand for an integer rational.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Shorthand for the rational `p/q`.
pub fn rat(p: i64, q: i64) -> Rat {
    assert!(q != 0, "zero denominator");
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// `2^-e` as an exact rational.
pub fn pow2_neg(e: u32) -> Rat {
    Rat::new(BigInt::one(), BigInt::one() << e)
}

/// `base^exp` as an exact rational, `exp` may be negative.
pub fn rat_pow(base: i64, exp: i32) -> Rat {
    let b = Rat::from_integer(BigInt::from(base));
    if exp >= 0 {
        num::pow::pow(b, exp as usize)
    } else {
        num::pow::pow(b, (-exp) as usize).recip()
    }
}

/// Exact conversion of a finite f64 into a rational.
pub fn rat_from_f64(x: f64) -> Result<Rat> {
    Rat::from_f64(x).ok_or_else(|| Error::invalid(format!("non-finite value {x} has no rational form")))
}

/// Nearest-f64 of a rational.
pub fn rat_to_f64(x: &Rat) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Whether `x` converts to f64 and back without loss.
pub fn rat_is_f64_exact(x: &Rat) -> bool {
    match x.to_f64() {
        Some(f) if f.is_finite() => Rat::from_f64(f).map(|r| r == *x).unwrap_or(false),
        _ => false,
    }
}

/// Bit length of the denominator (1 for integers).
pub fn denom_bits(x: &Rat) -> u64 {
    x.denom().bits()
}

/// Numeric evaluation mode.
///
/// Exact mode carries a cap on denominator bit length; blowing past it is
/// reported as a precision-budget error rather than silently rounding. Float
/// mode carries the epsilon used by approximate comparisons.
#[derive(Debug, Clone, PartialEq)]
pub enum NumericMode {
    Rational { max_denom_bits: u64 },
    F64 { eps: f64 },
}

impl NumericMode {
    pub fn rational() -> Self {
        NumericMode::Rational {
            max_denom_bits: DEFAULT_PRECISION_BITS,
        }
    }

    pub fn f64_mode() -> Self {
        NumericMode::F64 { eps: 1e-9 }
    }

    pub fn tag(&self) -> ModeTag {
        match self {
            NumericMode::Rational { .. } => ModeTag::Rational,
            NumericMode::F64 { .. } => ModeTag::F64,
        }
    }
}

impl Default for NumericMode {
    fn default() -> Self {
        NumericMode::rational()
    }
}

/// Serialization tag: which encoding a network file uses for its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeTag {
    Rational,
    F64,
}

impl ModeTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeTag::Rational => "rational",
            ModeTag::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rational" => Ok(ModeTag::Rational),
            "f64" => Ok(ModeTag::F64),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for ModeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A mode-tagged scalar value, the input/output type of [`crate::net::ReluNet::eval`].
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Rational(Rat),
    F64(f64),
}

impl Scalar {
    pub fn to_rat(&self) -> Result<Rat> {
        match self {
            Scalar::Rational(r) => Ok(r.clone()),
            Scalar::F64(x) => rat_from_f64(*x),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Rational(r) => rat_to_f64(r),
            Scalar::F64(x) => *x,
        }
    }
}

impl From<Rat> for Scalar {
    fn from(r: Rat) -> Self {
        Scalar::Rational(r)
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::F64(x)
    }
}

/// ReLU on a rational.
pub fn relu_rat(x: &Rat) -> Rat {
    if x.is_negative() {
        Rat::zero()
    } else {
        x.clone()
    }
}

/// Parse a `"p/q"` string (lowest terms enforced by BigRational's constructor).
pub fn rat_from_str(s: &str) -> Result<Rat> {
    let (p, q) = match s.split_once('/') {
        Some((p, q)) => (p, q),
        None => (s, "1"),
    };
    let num: BigInt = p
        .parse()
        .map_err(|_| Error::invalid(format!("bad rational numerator in {s:?}")))?;
    let den: BigInt = q
        .parse()
        .map_err(|_| Error::invalid(format!("bad rational denominator in {s:?}")))?;
    if den.is_zero() {
        return Err(Error::invalid(format!("zero denominator in {s:?}")));
    }
    Ok(Rat::new(num, den))
}

/// Render a rational as `"p/q"` in lowest terms.
pub fn rat_to_str(x: &Rat) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_string_round_trip() {
        for (p, q) in [(0, 1), (3, 4), (-7, 2), (22, 7)] {
            let r = rat(p, q);
            assert_eq!(rat_from_str(&rat_to_str(&r)).unwrap(), r);
        }
        assert_eq!(rat_from_str("5").unwrap(), rat_int(5));
        assert_eq!(rat_from_str("6/4").unwrap(), rat(3, 2));
        assert!(rat_from_str("1/0").is_err());
        assert!(rat_from_str("x/2").is_err());
    }

    #[test]
    fn f64_round_trip_is_exact() {
        for x in [0.1, -3.75, 1e-300, 123456.789] {
            let r = rat_from_f64(x).unwrap();
            assert_eq!(rat_to_f64(&r), x);
            assert!(rat_is_f64_exact(&r));
        }
        // 1/3 is not a dyadic rational, so it cannot be f64-exact.
        assert!(!rat_is_f64_exact(&rat(1, 3)));
    }

    #[test]
    fn denom_bits_counts() {
        assert_eq!(denom_bits(&rat_int(5)), 1);
        assert_eq!(denom_bits(&rat(1, 8)), 4);
        assert_eq!(denom_bits(&pow2_neg(100)), 101);
    }
}

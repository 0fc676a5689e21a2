//! Registry of named test functions with closed-form smoothness metadata.
//!
//! Approximation targets are ordinary callables on the unit cube; the claimed
//! smoothness is caller-supplied metadata used to configure schedules and
//! validate embedding conditions, not something computed from the function.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothnessClass {
    Sobolev,
    Besov,
}

impl fmt::Display for SmoothnessClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmoothnessClass::Sobolev => f.write_str("sobolev"),
            SmoothnessClass::Besov => f.write_str("besov"),
        }
    }
}

/// Caller-asserted smoothness of a target function.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessClaim {
    pub s: f64,
    pub q: f64,
    pub class: SmoothnessClass,
    /// Secondary index for the Besov scale.
    pub besov_r: Option<f64>,
}

/// A function on `[0,1]^dim` to be approximated.
#[derive(Clone)]
pub struct TargetFunction {
    pub name: String,
    pub dim: usize,
    pub claim: SmoothnessClaim,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("claim", &self.claim)
            .finish()
    }
}

impl TargetFunction {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        claim: SmoothnessClaim,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TargetFunction {
            name: name.into(),
            dim,
            claim,
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.eval)(x)
    }

    pub fn as_fn(&self) -> impl Fn(&[f64]) -> f64 + Send + Sync + '_ {
        move |x| (self.eval)(x)
    }

    /// Look up a named function in the registry.
    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let sobolev = |s: f64, q: f64| SmoothnessClaim {
            s,
            q,
            class: SmoothnessClass::Sobolev,
            besov_r: None,
        };
        match name {
            // Tensor product of sine waves; analytic, claimed conservatively.
            "sin2pi" => Ok(TargetFunction::new(name, dim, sobolev(1.0, 2.0), move |x| {
                x.iter().map(|&xi| (std::f64::consts::TAU * xi).sin()).product()
            })),
            // Square-root kink along the first coordinate, away from b-adic
            // points of small bases.
            "kink" => Ok(TargetFunction::new(name, dim, sobolev(0.9, 2.0), move |x| {
                (x[0] - 0.413).abs().sqrt()
            })),
            // Polynomial tensor bump, flat at the boundary.
            "bump" => Ok(TargetFunction::new(name, dim, sobolev(2.0, f64::INFINITY), move |x| {
                x.iter().map(|&xi| 16.0 * (xi * (1.0 - xi)).powi(2)).product()
            })),
            // Finite sum of hat functions at mixed scales and offsets.
            "waveletsum" => {
                let claim = SmoothnessClaim {
                    s: 0.75,
                    q: 2.0,
                    class: SmoothnessClass::Besov,
                    besov_r: Some(f64::INFINITY),
                };
                Ok(TargetFunction::new(name, dim, claim, move |x| {
                    let hat = |u: f64| {
                        if (0.0..=1.0).contains(&u) {
                            1.0 - (2.0 * u - 1.0).abs()
                        } else {
                            0.0
                        }
                    };
                    let mut acc = 0.0;
                    for (l, offs) in [(0u32, 0.0), (2, 0.31), (4, 0.57), (5, 0.11)] {
                        let scale = (2f64).powi(l as i32);
                        let weight = (2f64).powf(-(l as f64) * 0.75);
                        acc += weight * hat(scale * (x[0] - offs));
                    }
                    acc
                }))
            }
            // Constant one, for degenerate-path checks.
            "const1" => Ok(TargetFunction::new(name, dim, sobolev(4.0, f64::INFINITY), |_| 1.0)),
            other => Err(Error::invalid(format!(
                "unknown function {other:?}; known: sin2pi, kink, bump, waveletsum, const1"
            ))),
        }
    }

    /// Override the claimed smoothness (experiments sweep these).
    pub fn with_claim(mut self, s: f64, q: f64) -> Self {
        self.claim.s = s;
        self.claim.q = q;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup() {
        let f = TargetFunction::by_name("sin2pi", 1).unwrap();
        assert!((f.eval(&[0.25]) - 1.0).abs() < 1e-12);
        assert!(TargetFunction::by_name("nope", 1).is_err());
        let b = TargetFunction::by_name("bump", 2).unwrap();
        assert_eq!(b.eval(&[0.0, 0.5]), 0.0);
        assert!((b.eval(&[0.5, 0.5]) - 1.0).abs() < 1e-12);
    }
}

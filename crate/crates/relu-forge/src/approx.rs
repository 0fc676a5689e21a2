//! Level schedules and the network builders that realize piecewise
//! polynomials: per-level assembly (cell indexing, coefficient lookup,
//! clamped product chains) and the multiscale sum across levels.

use num::One;

use crate::error::{Error, Result};
use crate::funcs::TargetFunction;
use crate::gadgets::{cell_index_net, clamp_net, product_net};
use crate::net::{apply_to_coords, concat, pad_depth, sum_nets, AffineLayer, ReluNet};
use crate::poly::{multiscale_decompose, quantize_coeffs, PiecewisePoly, QuadratureSpec, QuantizedPoly};
use crate::scalar::{rat_from_f64, rat_int, rat_pow, Rat};
use crate::sparse::{sparse_vector_net, SparseIntVector, SparseNetBuild};

/// All per-level tunables: the adaptivity exponent, the coarse/fine level
/// cutoffs, and the discretization and product-accuracy schedules.
#[derive(Debug, Clone)]
pub struct ScheduleConfig {
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub dim: usize,
    pub base: u64,
    pub degree: u32,
    pub coarse_level: u32,
    pub fine_level: u32,
    pub kappa: f64,
    pub tau: f64,
    pub k1: f64,
    pub k2: f64,
    pub quad: QuadratureSpec,
}

/// `1/q - 1/p < s/d`, the strict condition for a compact embedding.
pub fn embedding_satisfied(s: f64, p: f64, q: f64, d: usize) -> bool {
    inv(q) - inv(p) < s / d as f64
}

fn inv(p: f64) -> f64 {
    if p.is_infinite() {
        0.0
    } else {
        1.0 / p
    }
}

impl ScheduleConfig {
    pub fn new(s: f64, p: f64, q: f64, d: usize, base: u64, coarse_level: u32) -> Result<Self> {
        if !(s > 0.0) || d == 0 || base < 2 {
            return Err(Error::invalid("need s > 0, d >= 1, base >= 2"));
        }
        if !(1.0..).contains(&q) || q > p {
            return Err(Error::invalid("need 1 <= q <= p"));
        }
        if !embedding_satisfied(s, p, q, d) {
            return Err(Error::invalid(format!(
                "embedding violated: 1/q - 1/p = {} is not below s/d = {}",
                inv(q) - inv(p),
                s / d as f64
            )));
        }
        let df = d as f64;
        let kappa = s / (s + df * inv(p) - df * inv(q));
        let fine_level = (kappa * coarse_level as f64).floor() as u32;
        let tau = if p == q {
            1.0
        } else if p.is_infinite() {
            (s - df * inv(q)) / 2.0
        } else {
            p * (s + df / p - df * inv(q)) / (2.0 * (p - q))
        };
        // The fine-level tail must be summable:
        // d/q - d/p - s + (1 - q/p) tau < 0.
        let tail = df * inv(q) - df * inv(p) - s + (1.0 - q * inv(p)) * tau;
        if !(tau > 0.0 && tail < 0.0) {
            return Err(Error::invalid(format!("tail exponent {tail} not negative for tau {tau}")));
        }
        let logb = (base as f64).log2();
        let k1 = (s * logb + 1.0) / 2.0;
        let k2 = (((df * inv(q) - s) * logb + 1.0) / 2.0).max(0.5);
        let degree = (s.ceil() as u32).max(1);
        Ok(ScheduleConfig {
            s,
            p,
            q,
            dim: d,
            base,
            degree,
            coarse_level,
            fine_level,
            kappa,
            tau,
            k1,
            k2,
            quad: QuadratureSpec::for_degree(degree),
        })
    }

    /// Coefficient discretization step at a level: fine below the coarse
    /// cutoff (dense coefficients), geometrically relaxed above it (sparse).
    pub fn delta(&self, level: u32) -> f64 {
        let b = self.base as f64;
        let df = self.dim as f64;
        let l = level as f64;
        let l0 = self.coarse_level as f64;
        if level >= self.coarse_level {
            b.powf(-df * l0 * inv(self.q) + self.tau * (l - l0))
        } else {
            b.powf(-df * l * inv(self.q) + (self.s + 1.0) * (l - l0))
        }
    }

    /// Product-approximation accuracy at a level.
    pub fn product_accuracy(&self, level: u32) -> u32 {
        (self.k1 * self.coarse_level as f64 + self.k2 * level as f64).ceil().max(1.0) as u32
    }

    /// The dense/sparse regime boundary sits exactly at the coarse cutoff:
    /// `delta(l)^-q <= base^(d l)` iff `l >= coarse_level`.
    pub fn regime_boundary_holds(&self) -> bool {
        (0..=self.fine_level.max(self.coarse_level)).all(|l| {
            let delta = self.delta(l);
            // Equality holds exactly at the cutoff; allow for log roundoff.
            let dense = if self.q.is_finite() {
                -self.q * delta.log2()
                    <= (self.dim as f64) * (l as f64) * (self.base as f64).log2() + 1e-9
            } else {
                delta >= 1.0 - 1e-12
            };
            dense == (l >= self.coarse_level)
        })
    }
}

/// One coefficient lookup inside a level build.
#[derive(Debug)]
pub struct AlphaLookup {
    pub alpha_idx: usize,
    pub ints: Vec<i64>,
    pub build: SparseNetBuild,
}

/// A built one-level network with its audit data.
#[derive(Debug)]
pub struct OneLevelBuild {
    pub net: ReluNet,
    pub lookups: Vec<AlphaLookup>,
    pub quant: QuantizedPoly,
    /// Largest packed-bit-string length used by any lookup; stays below 53
    /// for f64-exact evaluation.
    pub max_packed_bits: u32,
}

/// Index-then-lookup preamble shared by every basis slot of a level:
/// `x -> (b^l x_1 - i_1, ..., b^l x_d - i_d, flat_cell_index)` on the good
/// region of the level.
fn level_preamble(d: usize, level: u32, base: u64, eps: &Rat) -> Result<ReluNet> {
    let one = Rat::one;
    if level == 0 {
        let mut a = AffineLayer::new(d + 1, d);
        for j in 0..d {
            a.set(j, j, one());
        }
        return Ok(ReluNet::affine(a));
    }
    let axis = cell_index_net(1, level, base, eps)?;
    let full = cell_index_net(d, level, base, eps)?;
    let mut axes = axis.clone();
    for _ in 1..d {
        axes = concat(&axes, &axis)?;
    }
    let carrier = pad_depth(&ReluNet::affine(AffineLayer::identity(d)), axes.depth())?;
    let block = concat(&concat(&axes, &carrier)?, &full)?;
    let mut triple = AffineLayer::new(3 * d, d);
    for j in 0..d {
        triple.set(j, j, one());
        triple.set(d + j, j, one());
        triple.set(2 * d + j, j, one());
    }
    // (i_1..i_d, x_1..x_d, ind) -> (b^l x_1 - i_1, ..., ind)
    let scale = rat_pow(base as i64, level as i32);
    let mut post = AffineLayer::new(d + 1, 2 * d + 1);
    for j in 0..d {
        post.set(j, d + j, scale.clone());
        post.set(j, j, -one());
    }
    post.set(d, 2 * d, one());
    Ok(ReluNet::affine(triple).then(&block).then_affine(post))
}

/// Realize one multiscale component as a network on the good region of its
/// level: index the cell, look up each quantized coefficient through a
/// sparse-vector network, and multiply by the monomial factors with clamped
/// approximate products.
pub fn one_level_net(
    poly: &PiecewisePoly,
    delta: f64,
    product_m: u32,
    eps: &Rat,
) -> Result<OneLevelBuild> {
    let d = poly.dim;
    let cells = poly.cells() as usize;
    let quant = quantize_coeffs(poly, delta)?;
    let delta_rat = rat_from_f64(delta)?;
    let alphas = poly.alphas();
    let mut nets = Vec::new();
    let mut lookups = Vec::new();
    let mut max_packed_bits = 0;
    let one = Rat::one;
    for (ai, alpha) in alphas.iter().enumerate() {
        let ints = &quant.ints[ai * cells..(ai + 1) * cells];
        if ints.iter().all(|&v| v == 0) {
            continue;
        }
        let vector = SparseIntVector::tight(ints.to_vec())?;
        let build = sparse_vector_net(&vector)?;
        max_packed_bits = max_packed_bits.max(build.max_packed_bits);
        // Normalize the looked-up coefficient into [-1, 1] for the product
        // chain and scale back at the end.
        let max_abs = delta_rat.clone() * rat_int(vector.linf().max(1));
        let amp = if max_abs > Rat::one() { max_abs } else { Rat::one() };
        let mut shift = AffineLayer::new(1, 1);
        shift.set(0, 0, one());
        shift.set_bias(0, one());
        let mut rescale = AffineLayer::new(1, 1);
        rescale.set(0, 0, delta_rat.clone() / amp.clone());
        let lookup = ReluNet::affine(shift).then(&build.net).then_affine(rescale);

        let mut net = level_preamble(d, poly.level, poly.base, eps)?
            .then(&apply_to_coords(&lookup, d + 1, d));
        let total_degree: u32 = alpha.iter().sum();
        if total_degree > 0 {
            let product = product_net(product_m);
            let clamp = clamp_net(&rat_int(-1), &rat_int(1))?;
            for (j, &aj) in alpha.iter().enumerate() {
                for _ in 0..aj {
                    let mut dup = AffineLayer::new(d + 2, d + 1);
                    for t in 0..=d {
                        dup.set(t, t, one());
                    }
                    dup.set(d + 1, j, one());
                    net = net
                        .then_affine(dup)
                        .then(&apply_to_coords(&product, d + 2, d))
                        .then(&apply_to_coords(&clamp, d + 1, d));
                }
            }
        }
        let mut select = AffineLayer::new(1, d + 1);
        select.set(0, d, amp);
        nets.push(net.then_affine(select));
        lookups.push(AlphaLookup {
            alpha_idx: ai,
            ints: ints.to_vec(),
            build,
        });
    }
    let net = if nets.is_empty() {
        ReluNet::affine(AffineLayer::new(1, d))
    } else {
        let sum = sum_nets(&nets)?;
        let class_width = 22 * d + 18;
        if sum.max_interior_dim().unwrap_or(0) <= class_width {
            sum.with_width(class_width)
        } else {
            sum
        }
    };
    Ok(OneLevelBuild {
        net,
        lookups,
        quant,
        max_packed_bits,
    })
}

/// The error scale a one-level build is held to (up to a fitted constant):
/// `(delta * min(1, b^-dl delta^-q)^(1/p) + 4^-m) * ||a||_q`.
pub fn one_level_error_scale(
    delta: f64,
    product_m: u32,
    level: u32,
    d: usize,
    base: u64,
    p: f64,
    q: f64,
    coeff_lq: f64,
) -> f64 {
    let bdl = (base as f64).powi((d as u32 * level) as i32);
    let ratio = if q.is_finite() {
        (delta.powf(-q) / bdl).min(1.0)
    } else if delta >= 1.0 {
        1.0 / bdl
    } else {
        1.0
    };
    let quant_term = if p.is_infinite() { delta } else { delta * ratio.powf(inv(p)) };
    (quant_term + 0.25f64.powi(product_m as i32)) * coeff_lq
}

/// A multiscale approximant with its per-level builds.
#[derive(Debug)]
pub struct MultiscaleBuild {
    pub net: ReluNet,
    pub levels: Vec<OneLevelBuild>,
    pub components: Vec<PiecewisePoly>,
    pub schedule: ScheduleConfig,
    pub max_packed_bits: u32,
}

/// Build the full approximant for a target function: decompose through the
/// fine level, realize each component at its scheduled accuracy, and sum.
pub fn multiscale_net(f: &TargetFunction, cfg: &ScheduleConfig, eps: &Rat) -> Result<MultiscaleBuild> {
    if f.dim != cfg.dim {
        return Err(Error::dims(cfg.dim, f.dim, "target dimension"));
    }
    if !cfg.regime_boundary_holds() {
        return Err(Error::invalid("schedule regime boundary violated"));
    }
    let cell = rat_pow(cfg.base as i64, -(cfg.fine_level as i32));
    if !(eps > &Rat::from_integer(0.into()) && eps < &cell) {
        return Err(Error::invalid(format!(
            "shrink parameter must satisfy 0 < eps < base^-fine_level = {cell}"
        )));
    }
    let eval = f.as_fn();
    let components = multiscale_decompose(
        &eval,
        cfg.base,
        cfg.fine_level,
        cfg.dim,
        cfg.degree,
        cfg.quad,
    )?;
    let mut levels = Vec::with_capacity(components.len());
    let mut max_packed_bits = 0;
    for (l, comp) in components.iter().enumerate() {
        let build = one_level_net(comp, cfg.delta(l as u32), cfg.product_accuracy(l as u32), eps)?;
        max_packed_bits = max_packed_bits.max(build.max_packed_bits);
        levels.push(build);
    }
    let nets: Vec<ReluNet> = levels.iter().map(|b| b.net.clone()).collect();
    let mut net = sum_nets(&nets)?;
    let class_width = 24 * cfg.dim + 20;
    if !net.is_affine() && net.max_interior_dim().unwrap_or(0) <= class_width {
        net = net.with_width(class_width);
    }
    Ok(MultiscaleBuild {
        net,
        levels,
        components,
        schedule: cfg.clone(),
        max_packed_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcs::TargetFunction;
    use crate::poly::project;
    use crate::scalar::{rat, DEFAULT_PRECISION_BITS};

    #[test]
    fn schedule_frozen_values() {
        // p = q = 2, s = 1, d = 1: kappa = 1, tau = 1; with l0 = 3 and base 2
        // the discretization steps are 2^-1.5 at the cutoff and 2^-3 one
        // level below.
        let cfg = ScheduleConfig::new(1.0, 2.0, 2.0, 1, 2, 3).unwrap();
        assert_eq!(cfg.kappa, 1.0);
        assert_eq!(cfg.fine_level, 3);
        assert_eq!(cfg.tau, 1.0);
        assert!((cfg.delta(3) - 2f64.powf(-1.5)).abs() < 1e-12);
        assert!((cfg.delta(2) - 2f64.powf(-3.0)).abs() < 1e-12);
        assert!(cfg.regime_boundary_holds());
    }

    #[test]
    fn schedule_rejects_bad_embedding() {
        // 1/q - 1/p = 1 requires s/d > 1.
        assert!(ScheduleConfig::new(0.5, f64::INFINITY, 1.0, 1, 2, 2).is_err());
        assert!(ScheduleConfig::new(1.5, f64::INFINITY, 1.0, 1, 2, 2).is_ok());
        // q > p is outside the construction's range.
        assert!(ScheduleConfig::new(1.0, 1.0, 2.0, 1, 2, 2).is_err());
    }

    #[test]
    fn schedule_nonlinear_regime() {
        let cfg = ScheduleConfig::new(1.25, f64::INFINITY, 2.0, 1, 2, 3).unwrap();
        assert!((cfg.kappa - (1.25 / 0.75)).abs() < 1e-12);
        assert_eq!(cfg.fine_level, 5);
        assert!(cfg.regime_boundary_holds());
    }

    #[test]
    fn one_level_single_indicator_coefficient() {
        // A single unit coefficient on the constant basis of a 4-cell level:
        // the network reproduces the indicator exactly on the good region.
        let mut p = PiecewisePoly::zero(2, 2, 1, 0);
        *p.coeff_mut(0, 2) = 1.0;
        let eps = rat(1, 64);
        let build = one_level_net(&p, 1.0, 3, &eps).unwrap();
        for cell in 0..4u64 {
            let x = rat(2 * cell as i64 + 1, 8);
            let y = build.net.eval_rat(&[x], DEFAULT_PRECISION_BITS).unwrap();
            let want = rat_int((cell == 2) as i64);
            assert_eq!(y[0], want, "cell {cell}");
        }
    }

    #[test]
    fn one_level_zero_polynomial_is_zero_net() {
        let p = PiecewisePoly::zero(2, 2, 1, 1);
        let eps = rat(1, 64);
        let build = one_level_net(&p, 0.5, 2, &eps).unwrap();
        assert!(build.net.is_affine());
        let y = build.net.eval_rat(&[rat(1, 3)], DEFAULT_PRECISION_BITS).unwrap();
        assert_eq!(y[0], rat_int(0));
    }

    #[test]
    fn one_level_linear_basis_accuracy() {
        // f(x) = x on [0,1) at level 1: coefficients (0, 0 | 0.5, 0.5)
        // for alpha in {0, 1} over two cells.
        let f = |x: &[f64]| x[0];
        let p = project(&f, 2, 1, 1, 1, QuadratureSpec::for_degree(1)).unwrap();
        let eps = rat(1, 32);
        let m = 6u32;
        let delta = 2f64.powi(-12);
        let build = one_level_net(&p, delta, m, &eps).unwrap();
        assert!(build.max_packed_bits < 53);
        let fnet = crate::net::F64Net::new(&build.net);
        let noise = 6.0 * 0.25f64.powi(m as i32) + 2.0 * delta + 1e-9;
        for i in 0..50 {
            let x = i as f64 / 50.0;
            if x % 0.5 > 0.5 - 1.0 / 32.0 {
                continue;
            }
            let err = (fnet.eval(&[x])[0] - x).abs();
            assert!(err <= noise, "x={x} err={err}");
        }
    }

    #[test]
    fn coefficient_lookup_exact_in_rational_mode() {
        let f = |x: &[f64]| (std::f64::consts::TAU * x[0]).sin();
        let p = project(&f, 2, 3, 1, 1, QuadratureSpec::for_degree(1)).unwrap();
        let eps = rat(1, 256);
        let build = one_level_net(&p, 0.125, 2, &eps).unwrap();
        for lk in &build.lookups {
            for (i, &want) in lk.ints.iter().enumerate() {
                let y = lk
                    .build
                    .net
                    .eval_rat(&[rat_int(i as i64 + 1)], DEFAULT_PRECISION_BITS)
                    .unwrap();
                assert_eq!(y[0], rat_int(want));
            }
        }
    }

    #[test]
    fn multiscale_level_zero_only() {
        let f = TargetFunction::by_name("sin2pi", 1).unwrap();
        let cfg = ScheduleConfig::new(1.0, 2.0, 2.0, 1, 2, 0).unwrap();
        assert_eq!(cfg.fine_level, 0);
        let eps = rat(1, 8);
        let ms = multiscale_net(&f, &cfg, &eps).unwrap();
        assert_eq!(ms.levels.len(), 1);
        let single = one_level_net(&ms.components[0], cfg.delta(0), cfg.product_accuracy(0), &eps).unwrap();
        for i in 0..20 {
            let x = rat(i, 20);
            let a = ms.net.eval_rat(&[x.clone()], DEFAULT_PRECISION_BITS).unwrap();
            let b = single.net.eval_rat(&[x], DEFAULT_PRECISION_BITS).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn multiscale_approximates_sine() {
        let f = TargetFunction::by_name("sin2pi", 1).unwrap();
        let cfg = ScheduleConfig::new(1.0, 2.0, 2.0, 1, 2, 4).unwrap();
        let eps = rat(1, 4096);
        let ms = multiscale_net(&f, &cfg, &eps).unwrap();
        assert!(ms.max_packed_bits < 53, "packed bits {}", ms.max_packed_bits);
        let fnet = crate::net::F64Net::new(&ms.net);
        // RMS error over good-region points should be comparable to the
        // finest discretization step.
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..400 {
            let x = (i as f64 + 0.5) / 400.0;
            let frac = (x * 16.0).fract();
            if frac > 1.0 - 16.0 / 4096.0 {
                continue;
            }
            let e = fnet.eval(&[x])[0] - f.eval(&[x]);
            acc += e * e;
            count += 1;
        }
        let rms = (acc / count as f64).sqrt();
        assert!(rms < 0.1, "rms {rms}");
    }
}

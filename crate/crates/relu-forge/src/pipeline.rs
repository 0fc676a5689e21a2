//! End-to-end approximant construction and benchmarking: replicate the
//! multiscale builder over pairwise-coprime bases, take a median through an
//! order-statistic network so no point is ruined by the thin unreliable
//! collars, then measure Lp errors and fit rate slopes.

use num::{One, Zero};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::approx::{multiscale_net, MultiscaleBuild, ScheduleConfig};
use crate::error::{Error, Result};
use crate::funcs::TargetFunction;
use crate::gadgets::order_statistic_net;
use crate::net::{apply_to_coords, AffineLayer, F64Net, ReluNet};
use crate::scalar::{rat_from_f64, rat_pow, Rat};

/// The replicated-base setup: `2^r >= 2d + 2` copies over the first primes,
/// per-base coarse/fine levels, and the shared shrink parameter.
#[derive(Debug, Clone)]
pub struct PrimeBaseEnsemble {
    pub dim: usize,
    pub log2_replication: u32,
    pub bases: Vec<u64>,
    pub levels: Vec<u32>,
    pub fine_levels: Vec<u32>,
    pub eps: Rat,
}

/// First `count` primes.
pub fn first_primes(count: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().all(|p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Half the minimum gap between the interior grid points `j * base^-level`
/// of all listed (base, level) pairs; defaults to 1/4 when no pair
/// contributes any interior point.
pub fn min_gap_epsilon(pairs: &[(u64, u32)]) -> Rat {
    let mut points: Vec<Rat> = Vec::new();
    for &(base, level) in pairs {
        if level == 0 {
            continue;
        }
        let denom = (base as i64).pow(level);
        for j in 1..denom {
            points.push(Rat::new(j.into(), denom.into()));
        }
    }
    if points.len() < 2 {
        // A single interior point still gets a usable collar width.
        return if points.is_empty() {
            Rat::new(1.into(), 4.into())
        } else {
            Rat::new(1.into(), (4i64 * 2).into())
        };
    }
    points.sort();
    points.dedup();
    let mut gap: Option<Rat> = None;
    for w in points.windows(2) {
        let g = &w[1] - &w[0];
        gap = Some(match gap {
            None => g,
            Some(cur) => {
                if g < cur {
                    g
                } else {
                    cur
                }
            }
        });
    }
    match gap {
        Some(g) => g / Rat::from_integer(2.into()),
        None => Rat::new(1.into(), 4.into()),
    }
}

impl PrimeBaseEnsemble {
    pub fn new(dim: usize, resolution: u64, kappa: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(kappa >= 1.0) {
            return Err(Error::invalid("adaptivity exponent must be at least 1"));
        }
        let mut r = 0u32;
        while (1usize << r) < 2 * dim + 2 {
            r += 1;
        }
        let m = 1usize << r;
        let bases = first_primes(m);
        let largest = *bases.last().unwrap();
        if resolution < largest {
            return Err(Error::invalid(format!(
                "resolution {resolution} below the largest base {largest}"
            )));
        }
        let levels: Vec<u32> = bases
            .iter()
            .map(|&b| {
                let mut l = 0u32;
                let mut pw = 1u64;
                while pw.saturating_mul(b) <= resolution {
                    pw *= b;
                    l += 1;
                }
                l
            })
            .collect();
        let fine_levels: Vec<u32> = levels.iter().map(|&l| (kappa * l as f64).floor() as u32).collect();
        let pairs: Vec<(u64, u32)> = bases.iter().copied().zip(fine_levels.iter().copied()).collect();
        let eps = min_gap_epsilon(&pairs);
        for (&b, &l) in bases.iter().zip(&fine_levels) {
            let cell = rat_pow(b as i64, -(l as i32));
            if eps >= cell {
                return Err(Error::invalid("degenerate shrink parameter"));
            }
        }
        Ok(PrimeBaseEnsemble {
            dim,
            log2_replication: r,
            bases,
            levels,
            fine_levels,
            eps,
        })
    }

    pub fn replication(&self) -> usize {
        1 << self.log2_replication
    }

    /// Whether `x` lies in the good region of base `i` at its fine level.
    pub fn in_good_region(&self, i: usize, x: &[f64]) -> bool {
        let base = self.bases[i];
        let level = self.fine_levels[i];
        let denom = rat_pow(base as i64, level as i32);
        x.iter().all(|&xi| {
            let xr = match rat_from_f64(xi) {
                Ok(v) => v,
                Err(_) => return false,
            };
            if xr < Rat::zero() || xr > Rat::one() {
                return false;
            }
            // Position within the level grid: bad iff within eps below the
            // next interior grid point.
            let scaled = &xr * &denom;
            let ceil = scaled.ceil();
            if ceil == scaled || ceil >= denom {
                return true;
            }
            let boundary = ceil / &denom;
            xr < boundary - &self.eps
        })
    }

    /// Number of bases whose good region excludes `x` (at most `dim` by the
    /// coprimality of the grids).
    pub fn bad_base_count(&self, x: &[f64]) -> usize {
        (0..self.bases.len()).filter(|&i| !self.in_good_region(i, x)).count()
    }
}

/// A fully assembled approximant with its per-base parts for instrumentation.
#[derive(Debug)]
pub struct Approximant {
    pub net: ReluNet,
    pub per_base: Vec<MultiscaleBuild>,
    pub ensemble: PrimeBaseEnsemble,
    pub max_packed_bits: u32,
}

/// Build the median-of-replicas approximant at a given resolution: one
/// multiscale network per prime base, stacked by sequential input
/// duplication, composed with the order-statistic network selecting the
/// median. The result is defined on the whole cube.
pub fn build_approximant(f: &TargetFunction, resolution: u64, s: f64, p: f64, q: f64) -> Result<Approximant> {
    let d = f.dim;
    let probe = ScheduleConfig::new(s, p, q, d, 2, 1)?;
    let ensemble = PrimeBaseEnsemble::new(d, resolution, probe.kappa)?;
    let m = ensemble.replication();
    let mut per_base = Vec::with_capacity(m);
    let mut max_packed_bits = 0;
    for i in 0..m {
        let cfg = ScheduleConfig::new(s, p, q, d, ensemble.bases[i], ensemble.levels[i])?;
        let build = multiscale_net(f, &cfg, &ensemble.eps)?;
        max_packed_bits = max_packed_bits.max(build.max_packed_bits);
        per_base.push(build);
    }
    // Stack: x -> (f_m(x), ..., f_1(x)) by duplicating the input before each
    // application and carrying earlier outputs through.
    let one = Rat::one;
    let mut net = ReluNet::affine(AffineLayer::identity(d));
    for i in 0..m {
        let outs = i;
        let total = d + outs;
        if i + 1 < m {
            // (x, outs) -> (x, x, outs)
            let mut dup = AffineLayer::new(d + total, total);
            for j in 0..d {
                dup.set(j, j, one());
                dup.set(d + j, j, one());
            }
            for j in 0..outs {
                dup.set(2 * d + j, d + j, one());
            }
            net = net
                .then_affine(dup)
                .then(&apply_to_coords(&per_base[i].net, d + total, 0));
            // (f_i(x), x, outs) -> (x, f_i(x), outs)
            let mut reorder = Vec::with_capacity(1 + d + outs);
            reorder.extend(1..=d);
            reorder.push(0);
            reorder.extend(d + 1..d + 1 + outs);
            net = net.then_affine(AffineLayer::selector(1 + d + outs, &reorder));
        } else {
            net = net.then(&apply_to_coords(&per_base[i].net, total, 0));
        }
    }
    let median = order_statistic_net(m / 2, ensemble.log2_replication)?;
    net = net.then(&median);
    let class_width = 30 * d + 24;
    if net.max_interior_dim().unwrap_or(0) <= class_width {
        net = net.with_width(class_width);
    }
    Ok(Approximant {
        net,
        per_base,
        ensemble,
        max_packed_bits,
    })
}

/// How an Lp error is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleScheme {
    /// One uniform sample per stratum of a regular grid, bootstrap bands.
    StratifiedMonteCarlo { samples: usize },
    /// Composite two-point Gauss panels; the band is the refinement delta.
    TensorQuadrature { panels: usize },
    /// Max over a jittered dense grid (sup-norm errors).
    DenseGridMax { points_per_axis: usize },
}

impl SampleScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SampleScheme::StratifiedMonteCarlo { .. } => "stratified-mc",
            SampleScheme::TensorQuadrature { .. } => "tensor-quadrature",
            SampleScheme::DenseGridMax { .. } => "dense-grid-max",
        }
    }
}

/// An error measurement with its provenance and the network's size audit.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub p: f64,
    pub scheme: String,
    pub error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub depth: usize,
    pub width: Option<usize>,
    pub params: u64,
    pub seed: u64,
}

/// Estimate `||f - net||_Lp` over the unit cube (or the subset where `keep`
/// holds).
pub fn measure_lp_error(
    f: &TargetFunction,
    net: &ReluNet,
    p: f64,
    scheme: SampleScheme,
    seed: u64,
) -> Result<ErrorReport> {
    measure_lp_error_where(f, net, p, scheme, seed, None)
}

pub fn measure_lp_error_where(
    f: &TargetFunction,
    net: &ReluNet,
    p: f64,
    scheme: SampleScheme,
    seed: u64,
    keep: Option<&(dyn Fn(&[f64]) -> bool + Sync)>,
) -> Result<ErrorReport> {
    if !(p >= 1.0) {
        return Err(Error::invalid("p must be at least 1 (or infinite)"));
    }
    let d = f.dim;
    if net.input_dim() != d {
        return Err(Error::dims(d, net.input_dim(), "measurement input"));
    }
    let compiled = F64Net::new(net);
    let report = |error: f64, ci_lo: f64, ci_hi: f64| ErrorReport {
        p,
        scheme: scheme.name().to_string(),
        error,
        ci_lo,
        ci_hi,
        depth: net.depth(),
        width: net.width(),
        params: net.param_count(),
        seed,
    };
    let abs_err = |pt: &[f64], cur: &mut Vec<f64>, next: &mut Vec<f64>| -> f64 {
        compiled.eval_scratch(pt, cur, next);
        (cur[0] - f.eval(pt)).abs()
    };
    match scheme {
        SampleScheme::StratifiedMonteCarlo { samples } => {
            if p.is_infinite() {
                return Err(Error::invalid("use the dense-grid scheme for sup-norm errors"));
            }
            let per_axis = (samples as f64).powf(1.0 / d as f64).ceil() as usize;
            let pts = stratified_points(d, per_axis, seed, keep);
            if pts.is_empty() {
                return Err(Error::invalid("no sample points survived the filter"));
            }
            let values: Vec<f64> = pts
                .par_iter()
                .map_init(
                    || (Vec::new(), Vec::new()),
                    |(cur, next), pt| abs_err(pt, cur, next).powf(p),
                )
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let error = mean.powf(1.0 / p);
            // Bootstrap over the per-stratum values.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
            let mut boots: Vec<f64> = (0..200)
                .map(|_| {
                    let mut acc = 0.0;
                    for _ in 0..values.len() {
                        acc += values[rng.gen_range(0..values.len())];
                    }
                    (acc / values.len() as f64).powf(1.0 / p)
                })
                .collect();
            boots.sort_by(|a, b| a.total_cmp(b));
            let lo = boots[(boots.len() as f64 * 0.025) as usize];
            let hi = boots[((boots.len() as f64 * 0.975) as usize).min(boots.len() - 1)];
            Ok(report(error, lo.min(error), hi.max(error)))
        }
        SampleScheme::TensorQuadrature { panels } => {
            if p.is_infinite() {
                return Err(Error::invalid("use the dense-grid scheme for sup-norm errors"));
            }
            let coarse = quadrature_estimate(d, panels, p, keep, &abs_err);
            let fine = quadrature_estimate(d, panels * 2, p, keep, &abs_err);
            let delta = (fine - coarse).abs();
            Ok(report(fine, fine - delta, fine + delta))
        }
        SampleScheme::DenseGridMax { points_per_axis } => {
            let pts = stratified_points(d, points_per_axis, seed, keep);
            if pts.is_empty() {
                return Err(Error::invalid("no sample points survived the filter"));
            }
            let worst = pts
                .par_iter()
                .map_init(
                    || (Vec::new(), Vec::new()),
                    |(cur, next), pt| abs_err(pt, cur, next),
                )
                .reduce(|| 0.0, f64::max);
            Ok(report(worst, worst, worst))
        }
    }
}

fn stratified_points(
    d: usize,
    per_axis: usize,
    seed: u64,
    keep: Option<&(dyn Fn(&[f64]) -> bool + Sync)>,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = per_axis.pow(d as u32);
    let mut pts = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = flat;
        let mut pt = Vec::with_capacity(d);
        for _ in 0..d {
            let cell = idx % per_axis;
            idx /= per_axis;
            pt.push((cell as f64 + rng.gen_range(0.0..1.0)) / per_axis as f64);
        }
        if keep.map_or(true, |k| k(&pt)) {
            pts.push(pt);
        }
    }
    pts
}

fn quadrature_estimate(
    d: usize,
    panels: usize,
    p: f64,
    keep: Option<&(dyn Fn(&[f64]) -> bool + Sync)>,
    abs_err: &(dyn Fn(&[f64], &mut Vec<f64>, &mut Vec<f64>) -> f64 + Sync),
) -> f64 {
    // Two-point Gauss nodes per panel along each axis.
    let offsets = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let nodes_per_axis: Vec<f64> = (0..panels)
        .flat_map(|i| offsets.iter().map(move |o| (i as f64 + o) / panels as f64))
        .collect();
    let n = nodes_per_axis.len();
    let total = n.pow(d as u32);
    let weight = 1.0 / (2usize.pow(d as u32) * panels.pow(d as u32)) as f64;
    // Collect, then sum sequentially: parallel float reduction is not
    // deterministic, and reruns must be byte-identical.
    let terms: Vec<f64> = (0..total)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(cur, next), flat| {
                let mut idx = flat;
                let mut pt = Vec::with_capacity(d);
                for _ in 0..d {
                    pt.push(nodes_per_axis[idx % n]);
                    idx /= n;
                }
                if keep.map_or(true, |k| k(&pt)) {
                    weight * abs_err(&pt, cur, next).powf(p)
                } else {
                    0.0
                }
            },
        )
        .collect();
    terms.iter().sum::<f64>().powf(1.0 / p)
}

/// Least-squares fit of `log error` against `log depth`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::invalid("rate fit needs at least 3 points"));
    }
    if points.iter().any(|&(l, e)| !(l > 0.0) || !(e > 0.0)) {
        return Err(Error::invalid("rate fit needs positive depths and errors"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(l, e)| (l.ln(), e.ln())).collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::invalid("degenerate rate fit (all depths equal)"));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;

    #[test]
    fn primes_and_ensemble_shape() {
        assert_eq!(first_primes(4), vec![2, 3, 5, 7]);
        // One input dimension needs 2^r >= 4 replicas over bases 2, 3, 5, 7.
        let e = PrimeBaseEnsemble::new(1, 8, 1.0).unwrap();
        assert_eq!(e.replication(), 4);
        assert_eq!(e.bases, vec![2, 3, 5, 7]);
        assert_eq!(e.levels, vec![3, 1, 1, 1]);
        assert!(PrimeBaseEnsemble::new(1, 5, 1.0).is_err());
    }

    #[test]
    fn epsilon_from_min_gap() {
        // Grids {1/2} and {1/3, 2/3}: closest pair is 1/3 to 1/2, so eps is
        // half of 1/6.
        let eps = min_gap_epsilon(&[(2, 1), (3, 1)]);
        assert_eq!(eps, rat(1, 12));
        let single = min_gap_epsilon(&[(2, 2)]);
        assert_eq!(single, rat(1, 8));
        assert_eq!(min_gap_epsilon(&[(2, 0)]), rat(1, 4));
    }

    #[test]
    fn bad_base_overlap_is_bounded() {
        let e = PrimeBaseEnsemble::new(1, 8, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20000 {
            let x = [rng.gen_range(0.0..1.0)];
            assert!(e.bad_base_count(&x) <= 1, "x = {}", x[0]);
        }
    }

    #[test]
    fn fit_rate_exact_power_law() {
        let pts: Vec<(f64, f64)> = [10.0f64, 20.0, 40.0, 80.0]
            .iter()
            .map(|&l| (l, 7.0 * l.powf(-2.0)))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!((fit.intercept.exp() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn fit_rate_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<(f64, f64)> = [8.0f64, 16.0, 32.0, 64.0, 128.0]
            .iter()
            .map(|&l| (l, 3.0 * l.powf(-2.0) * (1.0 + rng.gen_range(-0.05..0.05))))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 0.1, "slope {}", fit.slope);
        assert!(fit.r2 > 0.99);
    }

    #[test]
    fn fit_rate_rejects_degenerate() {
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 0.0), (3.0, 0.5)]).is_err());
    }

    #[test]
    fn measure_analytic_cases() {
        let f = TargetFunction::by_name("const1", 1).unwrap();
        let one_net = {
            let mut a = AffineLayer::new(1, 1);
            a.set_bias(0, Rat::one());
            ReluNet::affine(a)
        };
        let r = measure_lp_error(&f, &one_net, 2.0, SampleScheme::TensorQuadrature { panels: 16 }, 1).unwrap();
        assert!(r.error < 1e-12);
        // ||x - 0||_L2 over [0,1] is 1/sqrt(3).
        let fx = TargetFunction::new(
            "linear",
            1,
            f.claim,
            |x: &[f64]| x[0],
        );
        let zero_net = ReluNet::affine(AffineLayer::new(1, 1));
        let r = measure_lp_error(&fx, &zero_net, 2.0, SampleScheme::TensorQuadrature { panels: 32 }, 1).unwrap();
        assert!((r.error - 1.0 / 3f64.sqrt()).abs() < 1e-6, "{}", r.error);
        let mc = measure_lp_error(&fx, &zero_net, 2.0, SampleScheme::StratifiedMonteCarlo { samples: 4000 }, 7).unwrap();
        assert!(mc.ci_lo <= r.error + 1e-9 && r.error <= mc.ci_hi + 1e-9);
        let sup = measure_lp_error(&fx, &zero_net, f64::INFINITY, SampleScheme::DenseGridMax { points_per_axis: 4000 }, 7).unwrap();
        assert!((sup.error - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_target_is_reproduced() {
        let f = TargetFunction::by_name("const1", 1).unwrap().with_claim(1.0, 2.0);
        let a = build_approximant(&f, 8, 1.0, 2.0, 2.0).unwrap();
        assert_eq!(a.ensemble.bases, vec![2, 3, 5, 7]);
        let fnet = F64Net::new(&a.net);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // All multiscale components beyond level 0 vanish, so the only error
        // is product noise, which is tiny.
        for _ in 0..200 {
            let x = [rng.gen_range(0.0..1.0)];
            let y = fnet.eval(&x)[0];
            assert!((y - 1.0).abs() < 1e-3, "x={} y={y}", x[0]);
        }
    }

    #[test]
    fn median_is_bracketed_by_good_bases() {
        let f = TargetFunction::by_name("sin2pi", 1).unwrap();
        let a = build_approximant(&f, 8, 1.0, 2.0, 2.0).unwrap();
        let parts: Vec<F64Net> = a.per_base.iter().map(|b| F64Net::new(&b.net)).collect();
        let whole = F64Net::new(&a.net);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..2000 {
            let x = [rng.gen_range(0.0..1.0)];
            let y = whole.eval(&x)[0];
            let good: Vec<f64> = (0..parts.len())
                .filter(|&i| a.ensemble.in_good_region(i, &x))
                .map(|i| parts[i].eval(&x)[0])
                .collect();
            assert!(!good.is_empty());
            let lo = good.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = good.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(
                y >= lo - 1e-9 && y <= hi + 1e-9,
                "x={} median {y} outside [{lo}, {hi}]",
                x[0]
            );
        }
    }
}

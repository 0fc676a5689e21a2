//! Builders for the small networks everything else is assembled from:
//! continuous piecewise-linear functions, approximate squaring and
//! multiplication, clamping, max/min, sorting and order statistics, binary
//! bit extraction, and b-adic cell indexing.

use num::{One, Zero};

use crate::error::{Error, Result};
use crate::net::{apply_to_coords, concat, sum_nets, AffineLayer, ReluNet};
use crate::scalar::{rat_int, Rat};

/// A continuous piecewise-linear function on the real line, described by
/// strictly increasing knots with values at the knots and the two end slopes.
#[derive(Debug, Clone)]
pub struct Breakpoints {
    knots: Vec<Rat>,
    values: Vec<Rat>,
    left_slope: Rat,
    right_slope: Rat,
}

impl Breakpoints {
    pub fn new(knots: Vec<Rat>, values: Vec<Rat>, left_slope: Rat, right_slope: Rat) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::invalid("need equally many knots and values, at least one"));
        }
        for w in knots.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("knots must be strictly increasing"));
            }
        }
        Ok(Breakpoints {
            knots,
            values,
            left_slope,
            right_slope,
        })
    }

    /// Number of linear pieces (knots + 1).
    pub fn pieces(&self) -> usize {
        self.knots.len() + 1
    }

    /// Direct evaluation; the oracle the network is checked against.
    pub fn eval(&self, x: &Rat) -> Rat {
        let n = self.knots.len();
        if *x <= self.knots[0] {
            return &self.values[0] + &self.left_slope * (x - &self.knots[0]);
        }
        if *x >= self.knots[n - 1] {
            return &self.values[n - 1] + &self.right_slope * (x - &self.knots[n - 1]);
        }
        let mut i = 0;
        while self.knots[i + 1] < *x {
            i += 1;
        }
        let slope = (&self.values[i + 1] - &self.values[i]) / (&self.knots[i + 1] - &self.knots[i]);
        &self.values[i] + slope * (x - &self.knots[i])
    }

    /// Slope of each piece, left to right.
    fn slopes(&self) -> Vec<Rat> {
        let mut s = vec![self.left_slope.clone()];
        for i in 0..self.knots.len() - 1 {
            s.push((&self.values[i + 1] - &self.values[i]) / (&self.knots[i + 1] - &self.knots[i]));
        }
        s.push(self.right_slope.clone());
        s
    }
}

/// Realize a piecewise-linear function as `a0*x + c + sum_i a_i*σ(x - b_i)`,
/// one ReLU layer per knot with a slope jump. A function with `k` pieces
/// lands in width 5 and depth `k-1`; an affine function stays depth 0.
pub fn pwl_to_net(bp: &Breakpoints) -> ReluNet {
    let slopes = bp.slopes();
    let a0 = slopes[0].clone();
    let c = &bp.values[0] - &a0 * &bp.knots[0];
    let mut terms = Vec::new();
    let mut base = AffineLayer::new(1, 1);
    base.set(0, 0, a0);
    base.set_bias(0, c);
    terms.push(ReluNet::affine(base));
    for (i, knot) in bp.knots.iter().enumerate() {
        let jump = &slopes[i + 1] - &slopes[i];
        if jump.is_zero() {
            continue;
        }
        let mut shift = AffineLayer::new(1, 1);
        shift.set(0, 0, Rat::one());
        shift.set_bias(0, -knot.clone());
        let mut scale = AffineLayer::new(1, 1);
        scale.set(0, 0, jump);
        terms.push(ReluNet::from_layers(vec![shift, scale], Some(1)).unwrap());
    }
    sum_nets(&terms).expect("piecewise-linear assembly")
}

/// `x -> max(min(x, hi), lo)` in width 5, depth 2.
pub fn clamp_net(lo: &Rat, hi: &Rat) -> Result<ReluNet> {
    if lo >= hi {
        return Err(Error::invalid("clamp needs lo < hi"));
    }
    let bp = Breakpoints::new(
        vec![lo.clone(), hi.clone()],
        vec![lo.clone(), hi.clone()],
        Rat::zero(),
        Rat::zero(),
    )?;
    Ok(pwl_to_net(&bp))
}

/// The symmetric tent of height 1 over `[-1, 1]`; agrees with the integer
/// Dirac delta on the integers.
pub fn integer_delta_net() -> ReluNet {
    let bp = Breakpoints::new(
        vec![rat_int(-1), rat_int(0), rat_int(1)],
        vec![rat_int(0), rat_int(1), rat_int(0)],
        Rat::zero(),
        Rat::zero(),
    )
    .unwrap();
    pwl_to_net(&bp)
}

/// The sawtooth accumulator: on input x it computes
/// `x - sum_{j=1..k} 4^{-j} * hat^{∘j}(x)`, the degree-k approximation of x^2
/// on `[0, 1]`.
fn saw_accumulator(k: u32) -> ReluNet {
    let hat = pwl_to_net(
        &Breakpoints::new(vec![Rat::new(1.into(), 2.into())], vec![rat_int(1)], rat_int(2), rat_int(-2))
            .unwrap(),
    );
    let mut dup = AffineLayer::new(2, 1);
    dup.set(0, 0, Rat::one());
    dup.set(1, 0, Rat::one());
    let mut net = ReluNet::affine(dup);
    let mut scale = Rat::one();
    for _ in 0..k {
        scale /= rat_int(4);
        net = net.then(&apply_to_coords(&hat, 2, 1));
        let mut fold = AffineLayer::identity(2);
        fold.set(0, 1, -scale.clone());
        net = net.then_affine(fold);
    }
    net.then_affine(AffineLayer::selector(2, &[0]))
}

/// Approximate squaring on `[-1, 1]`: width 9, depth `2k+1`, error at most
/// `4^-k`, exact at 0.
pub fn square_net(k: u32) -> ReluNet {
    assert!(k >= 1, "accuracy parameter must be at least 1");
    let acc = saw_accumulator(k);
    // x -> (σ(x), σ(-x)), then square each half and add.
    let mut pre = AffineLayer::new(2, 1);
    pre.set(0, 0, Rat::one());
    pre.set(1, 0, -Rat::one());
    let split = ReluNet::from_layers(vec![pre, AffineLayer::identity(2)], Some(2)).unwrap();
    let mut sum = AffineLayer::new(1, 2);
    sum.set(0, 0, Rat::one());
    sum.set(0, 1, Rat::one());
    split
        .then(&apply_to_coords(&acc, 2, 0))
        .then(&apply_to_coords(&acc, 2, 1))
        .then_affine(sum)
}

/// Approximate product on `[-1, 1]^2` via the polarization identity
/// `xy = 2((x+y)/2)^2 - 2(x/2)^2 - 2(y/2)^2`: width 13, depth `6k+3`,
/// error at most `6 * 4^-k`.
pub fn product_net(k: u32) -> ReluNet {
    assert!(k >= 1, "accuracy parameter must be at least 1");
    let sq = square_net(k);
    let half = Rat::new(1.into(), 2.into());
    let mut pre = AffineLayer::new(3, 2);
    pre.set(0, 0, half.clone());
    pre.set(0, 1, half.clone());
    pre.set(1, 0, half.clone());
    pre.set(2, 1, half);
    let mut post = AffineLayer::new(1, 3);
    post.set(0, 0, rat_int(2));
    post.set(0, 1, rat_int(-2));
    post.set(0, 2, rat_int(-2));
    ReluNet::affine(pre)
        .then(&apply_to_coords(&sq, 3, 0))
        .then(&apply_to_coords(&sq, 3, 1))
        .then(&apply_to_coords(&sq, 3, 2))
        .then_affine(post)
}

/// `(x, y) -> (max(x, y), min(x, y))` exactly: width 4, depth 1.
pub fn max_min_net() -> ReluNet {
    let one = Rat::one;
    let mut a0 = AffineLayer::new(4, 2);
    a0.set(0, 0, one());
    a0.set(1, 0, -one());
    a0.set(2, 1, one());
    a0.set(2, 0, -one());
    a0.set(3, 0, one());
    a0.set(3, 1, -one());
    // max = x + σ(y-x), min = x - σ(x-y), with x = σ(x) - σ(-x).
    let mut a1 = AffineLayer::new(2, 4);
    a1.set(0, 0, one());
    a1.set(0, 1, -one());
    a1.set(0, 2, one());
    a1.set(1, 0, one());
    a1.set(1, 1, -one());
    a1.set(1, 3, -one());
    ReluNet::from_layers(vec![a0, a1], Some(4)).unwrap()
}

/// One parallel comparator round: each pair `(i, j)` is replaced by
/// `(max, min)` when `descending` and `(min, max)` otherwise.
fn comparator_round(d: usize, pairs: &[(usize, usize, bool)]) -> ReluNet {
    let mut order = Vec::with_capacity(d);
    for &(i, j, _) in pairs {
        order.push(i);
        order.push(j);
    }
    debug_assert_eq!(order.len(), d);
    let pre = AffineLayer::selector(d, &order);
    let mut blocks = max_min_net();
    for _ in 1..pairs.len() {
        blocks = concat(&blocks, &max_min_net()).unwrap();
    }
    // Scatter (max, min) of pair t back to positions (i, j) or (j, i).
    let mut post = AffineLayer::new(d, d);
    for (t, &(i, j, descending)) in pairs.iter().enumerate() {
        let (hi, lo) = (2 * t, 2 * t + 1);
        if descending {
            post.set(i, hi, Rat::one());
            post.set(j, lo, Rat::one());
        } else {
            post.set(i, lo, Rat::one());
            post.set(j, hi, Rat::one());
        }
    }
    ReluNet::affine(pre).then(&blocks).then_affine(post)
}

/// Bitonic sorting network on `2^k` inputs, outputs in descending order.
/// Width `4d`, depth `binom(k+1, 2)` comparator rounds.
pub fn sort_net(k: u32) -> ReluNet {
    let d = 1usize << k;
    if k == 0 {
        return ReluNet::affine(AffineLayer::identity(1));
    }
    let mut net: Option<ReluNet> = None;
    let mut size = 2usize;
    while size <= d {
        let mut stride = size >> 1;
        while stride > 0 {
            let mut pairs = Vec::with_capacity(d / 2);
            for i in 0..d {
                let j = i ^ stride;
                if j > i {
                    // Orientation chosen so the full network sorts descending.
                    pairs.push((i, j, (i & size) == 0));
                }
            }
            let round = comparator_round(d, &pairs);
            net = Some(match net {
                None => round,
                Some(n) => n.then(&round),
            });
            stride >>= 1;
        }
        size <<= 1;
    }
    net.unwrap().with_width(4 * d)
}

/// Network returning the `tau`-th largest of `2^k` inputs (1-based).
pub fn order_statistic_net(tau: usize, k: u32) -> Result<ReluNet> {
    let d = 1usize << k;
    if tau < 1 || tau > d {
        return Err(Error::invalid(format!("order statistic {tau} out of range 1..={d}")));
    }
    Ok(sort_net(k).then_affine(AffineLayer::selector(d, &[tau - 1])))
}

/// Bit extraction: on input `x = 0.x_1...x_n` (binary, at most `n` bits)
/// returns `(0.x_{m+1}...x_n, x_1...x_m as an integer)`. Width 9, depth `4m`.
/// Behavior off the n-bit dyadic grid is unspecified.
pub fn bit_extract_net(n: u32, m: u32) -> Result<ReluNet> {
    if m > n {
        return Err(Error::invalid(format!("cannot extract {m} of {n} bits")));
    }
    // Internal ramps live strictly below the grid resolution 2^-n.
    let eps = crate::scalar::pow2_neg(n + 1);
    let half = Rat::new(1.into(), 2.into());
    let first_bit = pwl_to_net(&Breakpoints::new(
        vec![&half - &eps, half.clone()],
        vec![Rat::zero(), Rat::one()],
        Rat::zero(),
        Rat::zero(),
    )?);
    let drop_int = pwl_to_net(&Breakpoints::new(
        vec![Rat::one() - &eps, Rat::one()],
        vec![Rat::one() - &eps, Rat::zero()],
        Rat::one(),
        Rat::one(),
    )?);

    // State (rest, acc), starting from (x, 0).
    let mut start = AffineLayer::new(2, 1);
    start.set(0, 0, Rat::one());
    let mut net = ReluNet::affine(start);
    for _ in 0..m {
        // (rest, acc) -> (2*rest, rest, acc)
        let mut spread = AffineLayer::new(3, 2);
        spread.set(0, 0, rat_int(2));
        spread.set(1, 0, Rat::one());
        spread.set(2, 1, Rat::one());
        net = net
            .then_affine(spread)
            .then(&apply_to_coords(&drop_int, 3, 0))
            .then(&apply_to_coords(&first_bit, 3, 1));
        // (shifted_rest, bit, acc) -> (shifted_rest, 2*acc + bit)
        let mut fold = AffineLayer::new(2, 3);
        fold.set(0, 0, Rat::one());
        fold.set(1, 1, Rat::one());
        fold.set(1, 2, rat_int(2));
        net = net.then_affine(fold);
    }
    Ok(net)
}

/// Per-axis digit staircase for base `b` with ramp width `eps`: constant `j`
/// on `[j/b, (j+1)/b - eps]`, clamped to `0` and `b-1` outside `[0, 1]`.
fn digit_staircase(b: u64, eps: &Rat) -> ReluNet {
    let mut knots = Vec::new();
    let mut values = Vec::new();
    for j in 1..b {
        let edge = Rat::new(j.into(), b.into());
        knots.push(&edge - eps);
        values.push(rat_int(j as i64 - 1));
        knots.push(edge);
        values.push(rat_int(j as i64));
    }
    pwl_to_net(&Breakpoints::new(knots, values, Rat::zero(), Rat::zero()).unwrap())
}

/// Cell-index network: on the shrunk level-`level` cells of `[0,1)^d` in base
/// `base` it is the constant `sum_j base^(level*(j-1)) * i_j`, the flattened
/// index of the cell containing the input. Width `9d`, depth `2(b-1)l`.
pub fn cell_index_net(d: usize, level: u32, base: u64, eps: &Rat) -> Result<ReluNet> {
    if base < 2 {
        return Err(Error::invalid("base must be at least 2"));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let cell = crate::scalar::rat_pow(base as i64, -(level as i32));
    if !(eps > &Rat::zero() && eps < &cell) {
        return Err(Error::invalid(format!(
            "shrink parameter must satisfy 0 < eps < base^-level, got {eps}"
        )));
    }
    if level == 0 {
        return Ok(ReluNet::affine(AffineLayer::new(1, d)));
    }
    let axis = axis_index_net(level, base, eps);
    let mut net = axis.clone();
    for _ in 1..d {
        net = concat(&net, &axis).unwrap();
    }
    let mut combine = AffineLayer::new(1, d);
    for j in 0..d {
        combine.set(0, j, crate::scalar::rat_pow(base as i64, (level as i32) * (j as i32)));
    }
    Ok(net.then_affine(combine))
}

/// One-dimensional digit-peeling recursion: after `level` rounds the carried
/// accumulator equals the cell index of the input along this axis.
fn axis_index_net(level: u32, base: u64, eps: &Rat) -> ReluNet {
    let stair = digit_staircase(base, eps);
    let mut start = AffineLayer::new(3, 1);
    start.set(0, 0, Rat::one());
    start.set(1, 0, Rat::one());
    let mut net = ReluNet::affine(start);
    let b = rat_int(base as i64);
    for _ in 0..level {
        net = net.then(&apply_to_coords(&stair, 3, 1));
        // (x, digit, acc) -> (b*x - digit, b*x - digit, b*acc + digit)
        let mut fold = AffineLayer::new(3, 3);
        fold.set(0, 0, b.clone());
        fold.set(0, 1, -Rat::one());
        fold.set(1, 0, b.clone());
        fold.set(1, 1, -Rat::one());
        fold.set(2, 2, b.clone());
        fold.set(2, 1, Rat::one());
        net = net.then_affine(fold);
    }
    net.then_affine(AffineLayer::selector(3, &[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{pow2_neg, rat, rat_to_f64, DEFAULT_PRECISION_BITS};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn ev1(net: &ReluNet, x: Rat) -> Rat {
        net.eval_rat(&[x], DEFAULT_PRECISION_BITS).unwrap()[0].clone()
    }

    #[test]
    fn pwl_affine_has_depth_zero() {
        let bp = Breakpoints::new(vec![rat_int(0)], vec![rat_int(3)], rat_int(2), rat_int(2)).unwrap();
        let net = pwl_to_net(&bp);
        assert_eq!(net.depth(), 0);
        assert_eq!(ev1(&net, rat_int(5)), rat_int(13));
    }

    #[test]
    fn pwl_hat_interpolates() {
        let bp = Breakpoints::new(
            vec![rat_int(0), rat(1, 2), rat_int(1)],
            vec![rat_int(0), rat_int(1), rat_int(0)],
            Rat::zero(),
            Rat::zero(),
        )
        .unwrap();
        let net = pwl_to_net(&bp);
        assert_eq!(ev1(&net, rat(1, 4)), rat(1, 2));
        assert_eq!(net.width(), Some(5));
    }

    #[test]
    fn pwl_random_matches_oracle() {
        let mut rng = StdRng::seed_from_u64(1);
        // 7 pieces: 6 knots with distinct slopes almost surely.
        let mut knots = Vec::new();
        let mut x = rat_int(-10);
        for _ in 0..6 {
            x += rat(rng.gen_range(1i64..5), rng.gen_range(1i64..3));
            knots.push(x.clone());
        }
        let values: Vec<Rat> = (0..6).map(|_| rat(rng.gen_range(-9i64..9), rng.gen_range(1i64..4))).collect();
        let bp = Breakpoints::new(knots, values, rat(3, 2), rat(-7, 3)).unwrap();
        let net = pwl_to_net(&bp);
        assert_eq!(net.depth(), bp.pieces() - 1);
        for _ in 0..1000 {
            let x = rat(rng.gen_range(-60i64..60), rng.gen_range(1i64..6));
            assert_eq!(ev1(&net, x.clone()), bp.eval(&x));
        }
    }

    #[test]
    fn pwl_rejects_bad_knots() {
        assert!(Breakpoints::new(
            vec![rat_int(1), rat_int(1)],
            vec![rat_int(0), rat_int(0)],
            Rat::zero(),
            Rat::zero()
        )
        .is_err());
    }

    #[test]
    fn square_net_shape_and_exact_zero() {
        for k in 1..=4u32 {
            let h = square_net(k);
            assert_eq!(h.width(), Some(9));
            assert_eq!(h.depth(), (2 * k + 1) as usize);
            assert_eq!(ev1(&h, rat_int(0)), rat_int(0));
        }
    }

    #[test]
    fn square_net_error_bound_on_grid() {
        for k in 1..=6u32 {
            let h = crate::net::F64Net::new(&square_net(k));
            let bound = 0.25f64.powi(k as i32);
            let mut worst: f64 = 0.0;
            for i in 0..=2000 {
                let x = -1.0 + 2.0 * (i as f64) / 2000.0;
                worst = worst.max((h.eval(&[x])[0] - x * x).abs());
            }
            assert!(worst <= bound, "k={k}: {worst} > {bound}");
        }
    }

    #[test]
    fn square_net_sawtooth_value_frozen() {
        // At x = 1/2 the first sawtooth hits 1 and the second hits 0, giving
        // 1/2 - 1/4 * 1 - 1/16 * 0 = 1/4.
        let h = square_net(2);
        assert_eq!(ev1(&h, rat(1, 2)), rat(1, 4));
    }

    #[test]
    fn product_net_shape_zero_factor_and_bound() {
        let mut rng = StdRng::seed_from_u64(2);
        for k in 1..=3u32 {
            let p = product_net(k);
            assert_eq!(p.width(), Some(13));
            assert_eq!(p.depth(), (6 * k + 3) as usize);
            for _ in 0..20 {
                let x = rat(rng.gen_range(-8i64..=8), 8);
                let y = p
                    .eval_rat(&[x, rat_int(0)], DEFAULT_PRECISION_BITS)
                    .unwrap();
                assert_eq!(y[0], rat_int(0));
            }
        }
        let p3 = product_net(3);
        let v = p3
            .eval_rat(&[rat(1, 2), rat(1, 2)], DEFAULT_PRECISION_BITS)
            .unwrap()[0]
            .clone();
        let err = (v - rat(1, 4)).abs();
        assert!(err <= rat(3, 32), "error {}", rat_to_f64(&err));
        let pf = crate::net::F64Net::new(&product_net(2));
        let mut worst: f64 = 0.0;
        for i in 0..=60 {
            for j in 0..=60 {
                let (x, y) = (-1.0 + i as f64 / 30.0, -1.0 + j as f64 / 30.0);
                worst = worst.max((pf.eval(&[x, y])[0] - x * y).abs());
            }
        }
        assert!(worst <= 6.0 * 0.25f64.powi(2));
    }

    #[test]
    fn clamp_matches_oracle() {
        let c = clamp_net(&rat_int(-1), &rat_int(1)).unwrap();
        assert_eq!(c.depth(), 2);
        assert_eq!(c.width(), Some(5));
        assert_eq!(ev1(&c, rat_int(0)), rat_int(0));
        assert_eq!(ev1(&c, rat_int(5)), rat_int(1));
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = rat(rng.gen_range(-50i64..50), rng.gen_range(1i64..7));
            let want = x.clone().max(rat_int(-1)).min(rat_int(1));
            assert_eq!(ev1(&c, x), want);
        }
    }

    #[test]
    fn max_min_exact() {
        let p = max_min_net();
        assert_eq!(p.width(), Some(4));
        assert_eq!(p.depth(), 1);
        let mut rng = StdRng::seed_from_u64(4);
        let case = |x: Rat, y: Rat| {
            let out = p.eval_rat(&[x.clone(), y.clone()], DEFAULT_PRECISION_BITS).unwrap();
            assert_eq!(out[0], x.clone().max(y.clone()));
            assert_eq!(out[1], x.min(y));
        };
        case(rat_int(3), rat_int(3));
        case(rat_int(1), rat_int(2));
        for _ in 0..1000 {
            case(
                rat(rng.gen_range(-40i64..40), rng.gen_range(1i64..5)),
                rat(rng.gen_range(-40i64..40), rng.gen_range(1i64..5)),
            );
        }
    }

    #[test]
    fn sort_four_exhaustive() {
        let s = sort_net(2);
        assert_eq!(s.depth(), 3);
        assert_eq!(s.width(), Some(16));
        let perms = permutations(&[1, 2, 3, 4]);
        assert_eq!(perms.len(), 24);
        for p in &perms {
            let x: Vec<Rat> = p.iter().map(|&v| rat_int(v)).collect();
            let y = s.eval_rat(&x, DEFAULT_PRECISION_BITS).unwrap();
            let want: Vec<Rat> = [4, 3, 2, 1].iter().map(|&v| rat_int(v)).collect();
            assert_eq!(y, want, "failed on {p:?}");
        }
        // Already-descending input is a fixed point.
        let x: Vec<Rat> = [9, 7, 2, -1].iter().map(|&v| rat_int(v)).collect();
        assert_eq!(s.eval_rat(&x, DEFAULT_PRECISION_BITS).unwrap(), x);
    }

    #[test]
    fn order_statistic_selects() {
        let g = order_statistic_net(2, 2).unwrap();
        for p in permutations(&[1, 2, 3, 4]) {
            let x: Vec<Rat> = p.iter().map(|&v| rat_int(v)).collect();
            let y = g.eval_rat(&x, DEFAULT_PRECISION_BITS).unwrap();
            assert_eq!(y[0], rat_int(3));
        }
        assert!(order_statistic_net(5, 2).is_err());
        assert!(order_statistic_net(0, 2).is_err());
    }

    pub(crate) fn permutations(items: &[i64]) -> Vec<Vec<i64>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn bit_extract_base_case_and_shapes() {
        let f = bit_extract_net(6, 0).unwrap();
        assert_eq!(f.depth(), 0);
        let y = f.eval_rat(&[rat(11, 64)], DEFAULT_PRECISION_BITS).unwrap();
        assert_eq!(y, vec![rat(11, 64), rat_int(0)]);
        for m in 1..=4u32 {
            let f = bit_extract_net(8, m).unwrap();
            assert_eq!(f.depth(), (4 * m) as usize);
            assert_eq!(f.width(), Some(9));
        }
        assert!(bit_extract_net(3, 4).is_err());
    }

    #[test]
    fn bit_extract_known_value() {
        // x = 0.1011 in binary: two leading bits give the integer 2, the rest is 0.11 = 3/4.
        let f = bit_extract_net(4, 2).unwrap();
        let y = f.eval_rat(&[rat(11, 16)], DEFAULT_PRECISION_BITS).unwrap();
        assert_eq!(y, vec![rat(3, 4), rat_int(2)]);
    }

    #[test]
    fn bit_extract_exhaustive_small() {
        let n = 6u32;
        for m in 0..=n {
            let f = bit_extract_net(n, m).unwrap();
            for bits in 0u64..(1 << n) {
                let x = Rat::new(bits.into(), (1u64 << n).into());
                let y = f.eval_rat(&[x], DEFAULT_PRECISION_BITS).unwrap();
                let head = bits >> (n - m);
                let tail = bits & ((1 << (n - m)) - 1);
                assert_eq!(y[1], rat_int(head as i64));
                assert_eq!(y[0], Rat::new(tail.into(), (1u64 << (n - m)).into()));
            }
        }
    }

    #[test]
    fn cell_index_level_zero_is_constant() {
        let q = cell_index_net(2, 0, 3, &rat(1, 10)).unwrap();
        let y = q
            .eval_rat(&[rat(1, 3), rat(2, 3)], DEFAULT_PRECISION_BITS)
            .unwrap();
        assert_eq!(y[0], rat_int(0));
    }

    #[test]
    fn cell_index_one_dim_binary() {
        let q = cell_index_net(1, 1, 2, &rat(1, 8)).unwrap();
        assert_eq!(ev1(&q, rat(1, 5)), rat_int(0));
        assert_eq!(ev1(&q, rat(7, 10)), rat_int(1));
        assert_eq!(q.width(), Some(9));
        assert_eq!(q.depth(), 2);
    }

    #[test]
    fn cell_index_two_dim_grid() {
        let eps = rat(1, 64);
        let q = cell_index_net(2, 2, 2, &eps).unwrap();
        assert_eq!(q.width(), Some(18));
        assert_eq!(q.depth(), 4);
        for i1 in 0..4i64 {
            for i2 in 0..4i64 {
                let x = vec![rat(2 * i1 + 1, 8), rat(2 * i2 + 1, 8)];
                let y = q.eval_rat(&x, DEFAULT_PRECISION_BITS).unwrap();
                assert_eq!(y[0], rat_int(i1 + 4 * i2), "cell ({i1},{i2})");
            }
        }
        assert!(cell_index_net(1, 2, 2, &rat(1, 2)).is_err());
    }

    #[test]
    fn integer_delta_matches() {
        let h = integer_delta_net();
        assert_eq!(ev1(&h, rat_int(0)), rat_int(1));
        for z in [-3i64, -1, 1, 2, 7] {
            assert_eq!(ev1(&h, rat_int(z)), rat_int(0));
        }
        assert_eq!(ev1(&h, rat(1, 2)), rat(1, 2));
        assert_eq!(h.depth(), 3);
    }

    #[test]
    fn staircase_handles_boundaries() {
        let eps = pow2_neg(4);
        let s = digit_staircase(3, &eps);
        assert_eq!(ev1(&s, rat(1, 3)), rat_int(1));
        assert_eq!(ev1(&s, rat(2, 3)), rat_int(2));
        assert_eq!(ev1(&s, rat_int(0)), rat_int(0));
        assert_eq!(ev1(&s, rat_int(2)), rat_int(2));
        assert_eq!(s.depth(), 4);
    }
}

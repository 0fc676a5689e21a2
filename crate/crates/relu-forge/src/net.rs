//! Layered ReLU network representation and the calculus used to assemble
//! larger networks from smaller ones: composition, block concatenation,
//! identity extension, summation, and behavior-preserving padding.
//!
//! A network of depth `L` is stored as `L+1` affine maps with a componentwise
//! ReLU between consecutive maps. Depth counts ReLU applications; a depth-0
//! network is a single affine map and its width is undefined. The declared
//! width is an upper bound on every interior dimension and follows the
//! standard accounting rules of each combinator, so it can exceed the widest
//! layer actually present.

use num::Zero;

use crate::error::{Error, Result};
use crate::scalar::{denom_bits, rat_to_f64, relu_rat, NumericMode, Rat, Scalar};

/// A sparse affine map `x -> Wx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    rows: usize,
    cols: usize,
    /// Per-row sparse weights: (column, coefficient), sorted by column.
    weights: Vec<Vec<(usize, Rat)>>,
    bias: Vec<Rat>,
}

impl AffineLayer {
    pub fn new(rows: usize, cols: usize) -> Self {
        AffineLayer {
            rows,
            cols,
            weights: vec![Vec::new(); rows],
            bias: vec![Rat::zero(); rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = AffineLayer::new(n, n);
        for i in 0..n {
            a.weights[i].push((i, Rat::from_integer(1.into())));
        }
        a
    }

    /// Affine map selecting the given input coordinates, in order.
    pub fn selector(in_dim: usize, picks: &[usize]) -> Self {
        let mut a = AffineLayer::new(picks.len(), in_dim);
        for (r, &c) in picks.iter().enumerate() {
            assert!(c < in_dim, "selector index out of range");
            a.weights[r].push((c, Rat::from_integer(1.into())));
        }
        a
    }

    pub fn from_dense(rows: usize, cols: usize, w: &[Rat], b: &[Rat]) -> Self {
        assert_eq!(w.len(), rows * cols);
        assert_eq!(b.len(), rows);
        let mut a = AffineLayer::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = &w[r * cols + c];
                if !v.is_zero() {
                    a.weights[r].push((c, v.clone()));
                }
            }
            a.bias[r] = b[r].clone();
        }
        a
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn set(&mut self, r: usize, c: usize, v: Rat) {
        assert!(r < self.rows && c < self.cols);
        let row = &mut self.weights[r];
        match row.binary_search_by_key(&c, |e| e.0) {
            Ok(i) => {
                if v.is_zero() {
                    row.remove(i);
                } else {
                    row[i].1 = v;
                }
            }
            Err(i) => {
                if !v.is_zero() {
                    row.insert(i, (c, v));
                }
            }
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Rat {
        self.weights[r]
            .iter()
            .find(|e| e.0 == c)
            .map(|e| e.1.clone())
            .unwrap_or_else(Rat::zero)
    }

    pub fn set_bias(&mut self, r: usize, v: Rat) {
        self.bias[r] = v;
    }

    pub fn bias(&self, r: usize) -> &Rat {
        &self.bias[r]
    }

    pub fn apply(&self, x: &[Rat]) -> Vec<Rat> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = self.bias.clone();
        for (r, row) in self.weights.iter().enumerate() {
            for (c, v) in row {
                out[r] += v * &x[*c];
            }
        }
        out
    }

    /// Composition `self ∘ other` of two affine maps.
    pub fn compose(&self, other: &AffineLayer) -> AffineLayer {
        assert_eq!(self.cols, other.rows, "affine composition dims");
        let mut out = AffineLayer::new(self.rows, other.cols);
        out.bias = self.apply(&other.bias);
        for r in 0..self.rows {
            let mut acc: Vec<Rat> = vec![Rat::zero(); other.cols];
            for (mid, v) in &self.weights[r] {
                for (c, w) in &other.weights[*mid] {
                    acc[*c] += v * w;
                }
            }
            for (c, v) in acc.into_iter().enumerate() {
                if !v.is_zero() {
                    out.weights[r].push((c, v));
                }
            }
        }
        out
    }

    /// Block-diagonal direct sum.
    pub fn direct_sum(&self, other: &AffineLayer) -> AffineLayer {
        let mut out = AffineLayer::new(self.rows + other.rows, self.cols + other.cols);
        for r in 0..self.rows {
            out.weights[r] = self.weights[r].clone();
            out.bias[r] = self.bias[r].clone();
        }
        for r in 0..other.rows {
            out.weights[self.rows + r] = other.weights[r]
                .iter()
                .map(|(c, v)| (self.cols + c, v.clone()))
                .collect();
            out.bias[self.rows + r] = other.bias[r].clone();
        }
        out
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().map(|r| r.len()).sum()
    }

    fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, &Rat)> {
        self.weights
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |(c, v)| (r, *c, v)))
    }
}

/// A deep ReLU network: alternating affine maps and componentwise ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNet {
    layers: Vec<AffineLayer>,
    /// Declared width; `None` exactly when the network is affine (depth 0).
    width: Option<usize>,
}

impl ReluNet {
    /// Depth-0 network consisting of a single affine map.
    pub fn affine(layer: AffineLayer) -> Self {
        ReluNet {
            layers: vec![layer],
            width: None,
        }
    }

    /// The map `x -> max(0, x)` componentwise, as a depth-1 network.
    pub fn relu(n: usize) -> Self {
        ReluNet::from_layers(vec![AffineLayer::identity(n), AffineLayer::identity(n)], Some(n)).unwrap()
    }

    pub fn from_layers(layers: Vec<AffineLayer>, width: Option<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one affine map"));
        }
        for w in layers.windows(2) {
            if w[1].cols != w[0].rows {
                return Err(Error::dims(w[0].rows, w[1].cols, "consecutive layer dims must chain"));
            }
        }
        let depth = layers.len() - 1;
        if depth == 0 {
            if width.is_some() {
                return Err(Error::invalid("depth-0 network has no width"));
            }
        } else {
            let w = width.ok_or_else(|| Error::invalid("positive-depth network needs a width"))?;
            let widest = layers[..depth].iter().map(|l| l.rows).max().unwrap();
            if widest > w {
                return Err(Error::invalid(format!(
                    "declared width {w} below interior dimension {widest}"
                )));
            }
        }
        Ok(ReluNet { layers, width })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    /// Number of ReLU applications.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Declared width (undefined for affine networks).
    pub fn width(&self) -> Option<usize> {
        self.width
    }

    pub fn is_affine(&self) -> bool {
        self.depth() == 0
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    /// Interior dimensions, from first hidden layer to last.
    pub fn interior_dims(&self) -> Vec<usize> {
        self.layers[..self.depth()].iter().map(|l| l.rows).collect()
    }

    pub fn max_interior_dim(&self) -> Option<usize> {
        self.interior_dims().into_iter().max()
    }

    /// Total parameter count in the dense convention: sum over layers of
    /// `rows*cols + rows`.
    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.rows * l.cols + l.rows) as u64)
            .sum()
    }

    pub fn nonzero_count(&self) -> u64 {
        self.layers.iter().map(|l| l.nonzero_count() as u64).sum()
    }

    /// Raise the declared width to `w` (no structural change).
    pub fn with_width(mut self, w: usize) -> Self {
        if self.depth() > 0 {
            let actual = self.max_interior_dim().unwrap_or(0);
            assert!(w >= actual, "declared width {w} below actual {actual}");
            self.width = Some(w);
        }
        self
    }

    /// Exact forward pass. Fails if any intermediate denominator exceeds the cap.
    pub fn eval_rat(&self, x: &[Rat], max_denom_bits: u64) -> Result<Vec<Rat>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims(self.input_dim(), x.len(), "eval input"));
        }
        let mut v = self.layers[0].apply(x);
        check_budget(&v, max_denom_bits)?;
        for layer in &self.layers[1..] {
            for e in v.iter_mut() {
                *e = relu_rat(e);
            }
            v = layer.apply(&v);
            check_budget(&v, max_denom_bits)?;
        }
        Ok(v)
    }

    /// Forward pass in f64 (weights converted to nearest f64 on the fly).
    /// Prefer [`F64Net`] when evaluating many points.
    pub fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        F64Net::new(self).eval(x)
    }

    /// Mode-dispatched evaluation on tagged scalars.
    pub fn eval(&self, x: &[Scalar], mode: &NumericMode) -> Result<Vec<Scalar>> {
        match mode {
            NumericMode::Rational { max_denom_bits } => {
                let xs: Result<Vec<Rat>> = x.iter().map(|s| s.to_rat()).collect();
                let out = self.eval_rat(&xs?, *max_denom_bits)?;
                Ok(out.into_iter().map(Scalar::Rational).collect())
            }
            NumericMode::F64 { .. } => {
                let xs: Vec<f64> = x.iter().map(|s| s.to_f64()).collect();
                if xs.len() != self.input_dim() {
                    return Err(Error::dims(self.input_dim(), xs.len(), "eval input"));
                }
                Ok(self.eval_f64(&xs).into_iter().map(Scalar::F64).collect())
            }
        }
    }

    /// Consume `self` and postcompose with `g`, merging the affine boundary.
    /// This is `compose(g, self)` without re-cloning all of `self`'s layers.
    pub fn then(mut self, g: &ReluNet) -> ReluNet {
        assert_eq!(
            self.output_dim(),
            g.input_dim(),
            "composition dims: {} -> {}",
            self.output_dim(),
            g.input_dim()
        );
        let last = self.layers.pop().unwrap();
        self.layers.push(g.layers[0].compose(&last));
        self.layers.extend_from_slice(&g.layers[1..]);
        let width = max_width(self.width, g.width);
        ReluNet {
            layers: self.layers,
            width,
        }
    }

    /// Postcompose with an affine map (free: merges into the last layer).
    pub fn then_affine(self, a: AffineLayer) -> ReluNet {
        self.then(&ReluNet::affine(a))
    }

    /// Whether every weight and bias converts to f64 and back without loss.
    pub fn is_f64_exact(&self) -> bool {
        self.layers.iter().all(|l| {
            l.iter_entries().all(|(_, _, v)| crate::scalar::rat_is_f64_exact(v))
                && l.bias.iter().all(crate::scalar::rat_is_f64_exact)
        })
    }
}

fn check_budget(v: &[Rat], cap: u64) -> Result<()> {
    for e in v {
        let bits = denom_bits(e);
        if bits > cap {
            return Err(Error::PrecisionBudget { bits, cap });
        }
    }
    Ok(())
}

fn max_width(a: Option<usize>, b: Option<usize>) -> Option<usize> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    }
}

/// The composition `g ∘ f`. Depths add; an affine operand merges into its
/// neighbor at no depth cost; the width is the larger declared width.
pub fn compose(g: &ReluNet, f: &ReluNet) -> Result<ReluNet> {
    if f.output_dim() != g.input_dim() {
        return Err(Error::dims(g.input_dim(), f.output_dim(), "compose"));
    }
    Ok(f.clone().then(g))
}

/// The block-diagonal direct sum `f1 ⊕ f2` acting componentwise on split
/// inputs. Requires equal depths; widths add.
pub fn concat(f1: &ReluNet, f2: &ReluNet) -> Result<ReluNet> {
    if f1.depth() != f2.depth() {
        return Err(Error::DepthMismatch(f1.depth(), f2.depth()));
    }
    let layers = f1
        .layers
        .iter()
        .zip(&f2.layers)
        .map(|(a, b)| a.direct_sum(b))
        .collect();
    let width = match (f1.width, f2.width) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    Ok(ReluNet { layers, width })
}

/// `f ⊕ I_m`: apply `f` to the leading coordinates and pass the trailing `m`
/// through unchanged. Pass-through channels ride as `σ(x) - σ(-x)` pairs, so
/// the width grows by `2m`.
pub fn extend_identity(f: &ReluNet, m: usize) -> ReluNet {
    if m == 0 {
        return f.clone();
    }
    if f.is_affine() {
        return ReluNet::affine(f.layers[0].direct_sum(&AffineLayer::identity(m)));
    }
    let depth = f.depth();
    let one = || Rat::from_integer(1.into());
    let mut layers = Vec::with_capacity(f.layers.len());
    // Entry: split each extra input x_j into the pair (σ-side) x_j, -x_j.
    let mut split = AffineLayer::new(2 * m, m);
    for j in 0..m {
        split.set(2 * j, j, one());
        split.set(2 * j + 1, j, -one());
    }
    layers.push(f.layers[0].direct_sum(&split));
    // Interior: pair channels hold nonnegative values, identity carries them.
    for layer in &f.layers[1..depth] {
        layers.push(layer.direct_sum(&AffineLayer::identity(2 * m)));
    }
    // Exit: recombine each pair into x_j = σ(x_j) - σ(-x_j).
    let mut join = AffineLayer::new(m, 2 * m);
    for j in 0..m {
        join.set(j, 2 * j, one());
        join.set(j, 2 * j + 1, -one());
    }
    layers.push(f.layers[depth].direct_sum(&join));
    ReluNet {
        layers,
        width: f.width.map(|w| w + 2 * m),
    }
}

/// Apply `net` to the contiguous input coordinates starting at `start` of an
/// `total`-dimensional input, passing all other coordinates through. The
/// output keeps the surrounding coordinates in place, with `net`'s outputs
/// occupying the slot of its inputs.
pub fn apply_to_coords(net: &ReluNet, total: usize, start: usize) -> ReluNet {
    let din = net.input_dim();
    assert!(start + din <= total, "coordinate window out of range");
    let m = total - din;
    // Route [before, window, after] -> [window, before, after].
    let mut pre = Vec::with_capacity(total);
    pre.extend(start..start + din);
    pre.extend(0..start);
    pre.extend(start + din..total);
    let pre = AffineLayer::selector(total, &pre);
    let ext = extend_identity(net, m);
    // Route [out, before, after] -> [before, out, after].
    let dout = net.output_dim();
    let out_total = dout + m;
    let mut post = Vec::with_capacity(out_total);
    post.extend(dout..dout + start);
    post.extend(0..dout);
    post.extend(dout + start..out_total);
    let post = AffineLayer::selector(out_total, &post);
    ReluNet::affine(pre).then(&ext).then_affine(post)
}

/// The pointwise sum of networks sharing input and output dimensions, built
/// by carrying the input and a running accumulator past each summand in turn.
/// Depths add; the width is `max_i W_i + 2d + 2k`.
pub fn sum_nets(fs: &[ReluNet]) -> Result<ReluNet> {
    let first = fs.first().ok_or_else(|| Error::invalid("empty sum"))?;
    let d = first.input_dim();
    let k = first.output_dim();
    for f in fs {
        if f.input_dim() != d {
            return Err(Error::dims(d, f.input_dim(), "sum input dims"));
        }
        if f.output_dim() != k {
            return Err(Error::dims(k, f.output_dim(), "sum output dims"));
        }
    }
    // Fold all affine summands into a single affine map applied at the end.
    let mut tail = AffineLayer::new(k, d);
    let mut have_tail = false;
    let deep: Vec<&ReluNet> = fs
        .iter()
        .filter(|f| {
            if f.is_affine() {
                for (r, c, v) in f.layers[0].iter_entries() {
                    let cur = tail.get(r, c);
                    tail.set(r, c, cur + v.clone());
                }
                for r in 0..k {
                    let b = tail.bias(r) + f.layers[0].bias(r);
                    tail.set_bias(r, b);
                }
                have_tail = true;
                false
            } else {
                true
            }
        })
        .collect();
    if deep.is_empty() {
        return Ok(ReluNet::affine(tail));
    }

    let one = || Rat::from_integer(1.into());
    // Entry: x -> (x, 0_k).
    let mut entry = AffineLayer::new(d + k, d);
    for j in 0..d {
        entry.set(j, j, one());
    }
    let mut acc = ReluNet::affine(entry);
    for f in &deep {
        // (x, acc) -> (x_copy, x, acc); evaluate f on the copy; fold into acc.
        let mut dup = AffineLayer::new(2 * d + k, d + k);
        for j in 0..d {
            dup.set(j, j, one());
            dup.set(d + j, j, one());
        }
        for j in 0..k {
            dup.set(2 * d + j, d + j, one());
        }
        acc = acc.then_affine(dup).then(&apply_to_coords(f, 2 * d + k, 0));
        // (f(x), x, acc) -> (x, acc + f(x)).
        let mut fold = AffineLayer::new(d + k, k + d + k);
        for j in 0..d {
            fold.set(j, k + j, one());
        }
        for j in 0..k {
            fold.set(d + j, j, one());
            fold.set(d + j, k + d + j, one());
        }
        acc = acc.then_affine(fold);
    }
    // Exit: acc plus the folded affine part applied to x.
    let mut exit = AffineLayer::new(k, d + k);
    for j in 0..k {
        exit.set(j, d + j, one());
    }
    if have_tail {
        for (r, c, v) in tail.iter_entries() {
            exit.set(r, c, v.clone());
        }
        for r in 0..k {
            exit.set_bias(r, tail.bias(r).clone());
        }
    }
    let acc = acc.then_affine(exit);
    let w = deep.iter().filter_map(|f| f.width).max().unwrap() + 2 * d + 2 * k;
    Ok(acc.with_width(w))
}

/// Append identity-carrying ReLU layers until the depth reaches `target`.
/// Each padding layer doubles the output into a `σ(y) - σ(-y)` pair.
pub fn pad_depth(f: &ReluNet, target: usize) -> Result<ReluNet> {
    if target < f.depth() {
        return Err(Error::invalid(format!(
            "pad_depth target {target} below current depth {}",
            f.depth()
        )));
    }
    let mut net = f.clone();
    let k = net.output_dim();
    let one = || Rat::from_integer(1.into());
    let mut split = AffineLayer::new(2 * k, k);
    let mut join = AffineLayer::new(k, 2 * k);
    for j in 0..k {
        split.set(2 * j, j, one());
        split.set(2 * j + 1, j, -one());
        join.set(j, 2 * j, one());
        join.set(j, 2 * j + 1, -one());
    }
    let pad = ReluNet::from_layers(vec![split, join], Some(2 * k))?;
    while net.depth() < target {
        net = net.then(&pad);
    }
    Ok(net)
}

/// Physically pad every interior dimension up to `target` with dead zero
/// channels and raise the declared width accordingly.
pub fn pad_width(f: &ReluNet, target: usize) -> Result<ReluNet> {
    if f.is_affine() {
        return Ok(f.clone());
    }
    let cur = f.width.unwrap();
    if target < cur {
        return Err(Error::invalid(format!(
            "pad_width target {target} below current width {cur}"
        )));
    }
    let depth = f.depth();
    let mut layers = Vec::with_capacity(f.layers.len());
    for (i, l) in f.layers.iter().enumerate() {
        let rows = if i < depth { target } else { l.rows };
        let cols = if i > 0 { target } else { l.cols };
        let mut padded = AffineLayer::new(rows, cols);
        for (r, c, v) in l.iter_entries() {
            padded.set(r, c, v.clone());
        }
        for r in 0..l.rows {
            padded.set_bias(r, l.bias(r).clone());
        }
        layers.push(padded);
    }
    Ok(ReluNet {
        layers,
        width: Some(target),
    })
}

/// Weights lowered to f64 once, for fast repeated evaluation.
#[derive(Debug, Clone)]
pub struct F64Net {
    layers: Vec<F64Layer>,
    input_dim: usize,
    /// True when every rational weight was exactly representable.
    pub lossless: bool,
}

#[derive(Debug, Clone)]
struct F64Layer {
    rows: usize,
    weights: Vec<Vec<(u32, f64)>>,
    bias: Vec<f64>,
}

impl F64Net {
    pub fn new(net: &ReluNet) -> Self {
        let mut lossless = true;
        let layers = net
            .layers
            .iter()
            .map(|l| F64Layer {
                rows: l.rows,
                weights: l
                    .weights
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|(c, v)| {
                                lossless &= crate::scalar::rat_is_f64_exact(v);
                                (*c as u32, rat_to_f64(v))
                            })
                            .collect()
                    })
                    .collect(),
                bias: l
                    .bias
                    .iter()
                    .map(|v| {
                        lossless &= crate::scalar::rat_is_f64_exact(v);
                        rat_to_f64(v)
                    })
                    .collect(),
            })
            .collect();
        F64Net {
            layers,
            input_dim: net.input_dim(),
            lossless,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = Vec::new();
        let mut next = Vec::new();
        self.eval_scratch(x, &mut cur, &mut next);
        cur
    }

    /// Evaluation into caller-provided scratch buffers; the result lands in `cur`.
    pub fn eval_scratch(&self, x: &[f64], cur: &mut Vec<f64>, next: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.input_dim);
        apply_f64(&self.layers[0], x, cur);
        for layer in &self.layers[1..] {
            for e in cur.iter_mut() {
                if *e < 0.0 {
                    *e = 0.0;
                }
            }
            apply_f64(layer, cur, next);
            std::mem::swap(cur, next);
        }
    }

    pub fn eval1(&self, x: f64) -> f64 {
        debug_assert_eq!(self.input_dim, 1);
        self.eval(&[x])[0]
    }
}

// Merged affine maps can mix huge bit-ramp coefficients with unit-scale
// terms in one row; plain accumulation would cancel away the low-order bits
// that the bit-extraction gadgets live on. Neumaier-compensated sums keep
// dyadic payloads exact well past single-rounding range.
fn apply_f64(layer: &F64Layer, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for r in 0..layer.rows {
        let mut sum = layer.bias[r];
        let mut comp = 0.0;
        for (c, v) in &layer.weights[r] {
            let term = v * x[*c as usize];
            let t = sum + term;
            comp += if sum.abs() >= term.abs() {
                (sum - t) + term
            } else {
                (term - t) + sum
            };
            sum = t;
        }
        out.push(sum + comp);
    }
}

//! b-adic partitions, piecewise-polynomial projection, multiscale
//! decomposition, coefficient quantization, and a modulus-of-smoothness
//! estimator.
//!
//! Functions on the unit cube are projected cell by cell onto polynomials of
//! bounded degree in the sup-normalized monomial basis of each cell. The
//! difference of projections at consecutive levels yields the multiscale
//! components; their coefficients, rounded toward zero to a multiple of a
//! discretization step, are what the network builders encode.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on dense coefficient storage per level.
pub const MAX_CELLS: u64 = 1 << 24;

/// The level-`level` partition of `[0,1)^dim` into `base^(dim*level)`
/// congruent half-open cells, carrying the shrink parameter used to define
/// the good region.
#[derive(Debug, Clone)]
pub struct BAdicPartition {
    pub base: u64,
    pub level: u32,
    pub dim: usize,
    /// Width of the collar removed below each interior upper cell face.
    pub eps: f64,
}

impl BAdicPartition {
    pub fn new(base: u64, level: u32, dim: usize, eps: f64) -> Result<Self> {
        if base < 2 || dim == 0 {
            return Err(Error::invalid("need base >= 2 and dim >= 1"));
        }
        let cell = (base as f64).powi(-(level as i32));
        if !(eps > 0.0 && eps < cell) {
            return Err(Error::invalid(format!(
                "shrink parameter must satisfy 0 < eps < base^-level, got {eps}"
            )));
        }
        let p = BAdicPartition {
            base,
            level,
            dim,
            eps,
        };
        if p.cells() > MAX_CELLS {
            return Err(Error::ResourceLimit(format!(
                "{} cells exceed the dense-storage cap {MAX_CELLS}",
                p.cells()
            )));
        }
        Ok(p)
    }

    pub fn cells_per_axis(&self) -> u64 {
        self.base.pow(self.level)
    }

    pub fn cells(&self) -> u64 {
        self.cells_per_axis().pow(self.dim as u32)
    }

    /// Multi-index of the cell containing `x` (clamped into the cube).
    pub fn cell_of(&self, x: &[f64]) -> Vec<u64> {
        let n = self.cells_per_axis();
        x.iter()
            .map(|&xi| {
                let idx = (xi * n as f64).floor();
                (idx.max(0.0) as u64).min(n - 1)
            })
            .collect()
    }

    /// Flattened index: the first coordinate is least significant.
    pub fn flat_index(&self, cell: &[u64]) -> u64 {
        let n = self.cells_per_axis();
        cell.iter().rev().fold(0, |acc, &i| acc * n + i)
    }

    pub fn unflatten(&self, mut ind: u64) -> Vec<u64> {
        let n = self.cells_per_axis();
        let mut cell = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            cell.push(ind % n);
            ind /= n;
        }
        cell
    }

    /// Lower corner of a cell.
    pub fn corner(&self, cell: &[u64]) -> Vec<f64> {
        let h = 1.0 / self.cells_per_axis() as f64;
        cell.iter().map(|&i| i as f64 * h).collect()
    }

    /// Whether `x` avoids every collar `[j*h - eps, j*h)` below the interior
    /// upper faces of the level's cells.
    pub fn in_good_region(&self, x: &[f64]) -> bool {
        let n = self.cells_per_axis();
        let h = 1.0 / n as f64;
        x.iter().all(|&xi| {
            if !(0.0..1.0).contains(&xi) {
                return xi == 1.0;
            }
            let j = (xi / h).floor() + 1.0;
            if j as u64 >= n {
                return true;
            }
            xi < j * h - self.eps
        })
    }
}

/// Multi-indices `alpha` with `|alpha| <= degree` in `dim` variables, in
/// lexicographic order.
pub fn multi_indices(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if dim == 0 {
            out.push(cur.clone());
            return;
        }
        for a in 0..=left {
            cur.push(a);
            rec(dim - 1, left - a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// The basis function `prod_j (b^l x_j - i_j)^(alpha_j)` on its cell, zero
/// elsewhere.
pub fn basis_eval(alpha: &[u32], level: u32, cell: &[u64], base: u64, x: &[f64]) -> f64 {
    let scale = (base as f64).powi(level as i32);
    let mut v = 1.0;
    for j in 0..x.len() {
        let u = scale * x[j] - cell[j] as f64;
        if !(0.0..1.0).contains(&u) {
            return 0.0;
        }
        v *= u.powi(alpha[j] as i32);
    }
    v
}

/// Piecewise polynomial subordinate to a b-adic partition, stored densely as
/// `coeffs[alpha_index * cells + flat_cell_index]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewisePoly {
    pub base: u64,
    pub level: u32,
    pub dim: usize,
    pub degree: u32,
    pub coeffs: Vec<f64>,
}

impl PiecewisePoly {
    pub fn zero(base: u64, level: u32, dim: usize, degree: u32) -> Self {
        let cells = base.pow(level).pow(dim as u32);
        let n_alpha = multi_indices(dim, degree).len();
        PiecewisePoly {
            base,
            level,
            dim,
            degree,
            coeffs: vec![0.0; n_alpha * cells as usize],
        }
    }

    pub fn cells(&self) -> u64 {
        self.base.pow(self.level).pow(self.dim as u32)
    }

    pub fn alphas(&self) -> Vec<Vec<u32>> {
        multi_indices(self.dim, self.degree)
    }

    pub fn coeff(&self, alpha_idx: usize, cell_flat: u64) -> f64 {
        self.coeffs[alpha_idx * self.cells() as usize + cell_flat as usize]
    }

    pub fn coeff_mut(&mut self, alpha_idx: usize, cell_flat: u64) -> &mut f64 {
        let cells = self.cells() as usize;
        &mut self.coeffs[alpha_idx * cells + cell_flat as usize]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let part = BAdicPartition {
            base: self.base,
            level: self.level,
            dim: self.dim,
            eps: f64::MIN_POSITIVE,
        };
        let cell = part.cell_of(x);
        let flat = part.flat_index(&cell);
        let scale = (self.base as f64).powi(self.level as i32);
        let u: Vec<f64> = (0..self.dim)
            .map(|j| (scale * x[j] - cell[j] as f64).clamp(0.0, 1.0))
            .collect();
        let mut acc = 0.0;
        for (ai, alpha) in self.alphas().iter().enumerate() {
            let mut m = 1.0;
            for j in 0..self.dim {
                m *= u[j].powi(alpha[j] as i32);
            }
            acc += self.coeff(ai, flat) * m;
        }
        acc
    }

    /// Sup norm of the coefficient tensor.
    pub fn coeff_linf(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |a, &c| a.max(c.abs()))
    }

    /// `lq` norm of the coefficient tensor (max when `q` is infinite).
    pub fn coeff_lq(&self, q: f64) -> f64 {
        if q.is_infinite() {
            self.coeff_linf()
        } else {
            self.coeffs
                .iter()
                .map(|c| c.abs().powf(q))
                .sum::<f64>()
                .powf(1.0 / q)
        }
    }
}

/// Tensor Gauss-Legendre quadrature specification.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub points_per_axis: u32,
}

impl QuadratureSpec {
    pub fn for_degree(degree: u32) -> Self {
        QuadratureSpec {
            points_per_axis: degree + 1,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: u32) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let n = n as usize;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Newton iteration from the Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensor-product quadrature points and weights on `[0,1]^dim`.
fn tensor_quadrature(dim: usize, spec: QuadratureSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre_unit(spec.points_per_axis);
    let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
    let mut wts: Vec<f64> = vec![1.0];
    for _ in 0..dim {
        let mut next_pts = Vec::with_capacity(pts.len() * nodes.len());
        let mut next_wts = Vec::with_capacity(pts.len() * nodes.len());
        for (p, w) in pts.iter().zip(&wts) {
            for (x, wx) in nodes.iter().zip(&weights) {
                let mut q = p.clone();
                q.push(*x);
                next_pts.push(q);
                next_wts.push(w * wx);
            }
        }
        pts = next_pts;
        wts = next_wts;
    }
    (pts, wts)
}

/// Per-cell L2 projection of `f` onto piecewise polynomials of the given
/// degree at the given level. Exact (up to quadrature roundoff) whenever `f`
/// already lies in the target space and the order is at least `degree + 1`.
pub fn project(
    f: &dyn Fn(&[f64]) -> f64,
    base: u64,
    level: u32,
    dim: usize,
    degree: u32,
    quad: QuadratureSpec,
) -> Result<PiecewisePoly> {
    if quad.points_per_axis < degree + 1 {
        return Err(Error::invalid(format!(
            "quadrature order {} too low for degree {degree}",
            quad.points_per_axis
        )));
    }
    let cells_per_axis = base.pow(level);
    let cells = cells_per_axis.pow(dim as u32);
    if cells > MAX_CELLS {
        return Err(Error::ResourceLimit(format!(
            "{cells} cells exceed the dense-storage cap {MAX_CELLS}"
        )));
    }
    let alphas = multi_indices(dim, degree);
    let na = alphas.len();
    // Gram matrix of the monomial basis on the unit cell.
    let mut gram = vec![0.0; na * na];
    for (i, a) in alphas.iter().enumerate() {
        for (j, b) in alphas.iter().enumerate() {
            let mut g = 1.0;
            for t in 0..dim {
                g /= (a[t] + b[t] + 1) as f64;
            }
            gram[i * na + j] = g;
        }
    }
    let (pts, wts) = tensor_quadrature(dim, quad);
    let h = 1.0 / cells_per_axis as f64;
    let mut out = PiecewisePoly::zero(base, level, dim, degree);
    let mut moments = vec![0.0; na];
    let mut x = vec![0.0; dim];
    for flat in 0..cells {
        let cell = out_cell(cells_per_axis, dim, flat);
        moments.iter_mut().for_each(|m| *m = 0.0);
        for (p, w) in pts.iter().zip(&wts) {
            for j in 0..dim {
                x[j] = (cell[j] as f64 + p[j]) * h;
            }
            let fx = f(&x);
            for (i, a) in alphas.iter().enumerate() {
                let mut mono = 1.0;
                for t in 0..dim {
                    mono *= p[t].powi(a[t] as i32);
                }
                moments[i] += w * fx * mono;
            }
        }
        let sol = solve_dense(&gram, &moments, na)?;
        for (i, c) in sol.into_iter().enumerate() {
            *out.coeff_mut(i, flat) = c;
        }
    }
    Ok(out)
}

fn out_cell(cells_per_axis: u64, dim: usize, mut flat: u64) -> Vec<u64> {
    let mut cell = Vec::with_capacity(dim);
    for _ in 0..dim {
        cell.push(flat % cells_per_axis);
        flat /= cells_per_axis;
    }
    cell
}

/// Dense Gaussian elimination with partial pivoting (the systems here are
/// tiny Gram matrices).
fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(Error::invalid("singular projection system"));
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = m[row * n + col] / m[col * n + col];
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    Ok(x)
}

/// Multiscale components: level 0 is the coarsest projection, and each later
/// level is the difference between consecutive projections, expressed on the
/// finer grid. Partial sums telescope back to the projection at the last
/// level.
pub fn multiscale_decompose(
    f: &dyn Fn(&[f64]) -> f64,
    base: u64,
    l_max: u32,
    dim: usize,
    degree: u32,
    quad: QuadratureSpec,
) -> Result<Vec<PiecewisePoly>> {
    let mut out = Vec::with_capacity(l_max as usize + 1);
    let mut prev: Option<PiecewisePoly> = None;
    for l in 0..=l_max {
        let proj = project(f, base, l, dim, degree, quad)?;
        let component = match &prev {
            None => proj.clone(),
            Some(coarse) => {
                let refined = project(&|x: &[f64]| coarse.eval(x), base, l, dim, degree, quad)?;
                let mut diff = proj.clone();
                for (c, r) in diff.coeffs.iter_mut().zip(&refined.coeffs) {
                    *c -= r;
                }
                diff
            }
        };
        out.push(component);
        prev = Some(proj);
    }
    Ok(out)
}

/// Quantization of a coefficient tensor: round each coefficient toward zero
/// to an integer multiple of `delta`.
#[derive(Debug, Clone)]
pub struct QuantizedPoly {
    pub delta: f64,
    /// Integer quotients, same layout as the source coefficients.
    pub ints: Vec<i64>,
    /// The rounded polynomial, `delta * ints`.
    pub poly: PiecewisePoly,
}

pub fn quantize_coeffs(p: &PiecewisePoly, delta: f64) -> Result<QuantizedPoly> {
    if !(delta > 0.0) {
        return Err(Error::invalid("quantization step must be positive"));
    }
    let mut ints = Vec::with_capacity(p.coeffs.len());
    let mut poly = p.clone();
    for (c, slot) in p.coeffs.iter().zip(poly.coeffs.iter_mut()) {
        let q = (c.abs() / delta).floor() * c.signum();
        if q.abs() > i64::MAX as f64 {
            return Err(Error::ResourceLimit("quantized coefficient overflows i64".into()));
        }
        let q = q as i64;
        ints.push(q);
        *slot = delta * q as f64;
    }
    Ok(QuantizedPoly { delta, ints, poly })
}

/// Estimate of the k-th order modulus of smoothness `omega_k(f, t)` in the
/// `Lq` norm: maximize over sampled step vectors `|h| <= t` the `Lq` norm of
/// the k-th finite difference over the set where all terms stay inside the
/// cube. The estimate approaches the true value from below as the sample
/// count grows.
pub fn modulus_of_smoothness(
    f: &dyn Fn(&[f64]) -> f64,
    k: u32,
    t: f64,
    q: f64,
    dim: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(t > 0.0) || k == 0 {
        return Err(Error::invalid("need t > 0 and k >= 1"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let n_dirs = (samples as f64).sqrt().ceil() as usize;
    let n_x = samples / n_dirs.max(1) + 1;
    let binom: Vec<f64> = (0..=k).map(|j| binomial(k, j) as f64).collect();
    let mut best: f64 = 0.0;
    for dir_idx in 0..n_dirs {
        // Sweep |h| from small to t, with the last sample exactly at t.
        let mut h = vec![0.0; dim];
        if dim == 1 {
            h[0] = t * (dir_idx + 1) as f64 / n_dirs as f64;
        } else {
            let mut norm = 0.0;
            for hj in h.iter_mut() {
                *hj = rng.gen_range(-1.0..1.0);
                norm += *hj * *hj;
            }
            let norm = norm.sqrt().max(1e-12);
            let mag = t * (dir_idx + 1) as f64 / n_dirs as f64;
            for hj in h.iter_mut() {
                *hj *= mag / norm;
            }
        }
        // Admissible set: x and x + k*h inside the cube.
        let mut lo = vec![0.0; dim];
        let mut hi = vec![1.0; dim];
        let mut measure = 1.0;
        let mut empty = false;
        for j in 0..dim {
            let shift = k as f64 * h[j];
            if shift >= 0.0 {
                hi[j] = 1.0 - shift;
            } else {
                lo[j] = -shift;
            }
            if hi[j] <= lo[j] {
                empty = true;
                break;
            }
            measure *= hi[j] - lo[j];
        }
        if empty {
            continue;
        }
        let mut acc = 0.0;
        let mut sup: f64 = 0.0;
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        for _ in 0..n_x {
            for j in 0..dim {
                x[j] = rng.gen_range(lo[j]..hi[j]);
            }
            let mut diff = 0.0;
            for j in 0..=k {
                for (yj, (&xj, &hj)) in y.iter_mut().zip(x.iter().zip(&h)) {
                    *yj = xj + j as f64 * hj;
                }
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                diff += sign * binom[(k - j) as usize] * f(&y);
            }
            sup = sup.max(diff.abs());
            if q.is_finite() {
                acc += diff.abs().powf(q);
            }
        }
        let norm = if q.is_finite() {
            (acc / n_x as f64 * measure).powf(1.0 / q)
        } else {
            sup
        };
        best = best.max(norm);
    }
    Ok(best)
}

fn binomial(n: u32, k: u32) -> u64 {
    let mut acc = 1u64;
    for i in 0..k.min(n - k) {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

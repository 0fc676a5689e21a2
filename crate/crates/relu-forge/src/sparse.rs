//! Sparse integer vectors, their two-regime block encodings, and networks
//! that reproduce a vector's entries from the index alone.
//!
//! A vector `x` of length `N` with `l1`-norm at most `M` is encoded as a
//! string of (offset, value) blocks. When `N >= M` the offsets carry the
//! information (values are just increments in {0, +1, -1}); when `N < M` the
//! values carry it (offsets are single bits). A dedicated network walks the
//! decoding algorithm over the bits packed into the binary expansion of a
//! single real number, using bit extraction and an integer-delta gate; a
//! separate piecewise-linear part handles the few entries that are large.

use num::{One, Zero};
use std::fmt;

use crate::error::{Error, Result};
use crate::gadgets::{bit_extract_net, integer_delta_net, pwl_to_net, Breakpoints};
use crate::net::{apply_to_coords, concat, pad_depth, AffineLayer, ReluNet};
use crate::scalar::{rat_int, Rat};

/// Integer vector with a declared `l1` bound, the unit the codec operates on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseIntVector {
    entries: Vec<i64>,
    bound: i64,
}

impl SparseIntVector {
    pub fn new(entries: Vec<i64>, bound: i64) -> Result<Self> {
        if entries.is_empty() || bound < 1 {
            return Err(Error::invalid("need N >= 1 and M >= 1"));
        }
        let l1: i64 = entries.iter().map(|v| v.abs()).sum();
        if l1 > bound {
            return Err(Error::invalid(format!("l1 norm {l1} exceeds declared bound {bound}")));
        }
        Ok(SparseIntVector { entries, bound })
    }

    /// Vector with the bound set to its own `l1` norm (at least 1).
    pub fn tight(entries: Vec<i64>) -> Result<Self> {
        let l1: i64 = entries.iter().map(|v| v.abs()).sum();
        SparseIntVector::new(entries, l1.max(1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bound(&self) -> i64 {
        self.bound
    }

    pub fn entries(&self) -> &[i64] {
        &self.entries
    }

    pub fn l1(&self) -> i64 {
        self.entries.iter().map(|v| v.abs()).sum()
    }

    pub fn linf(&self) -> i64 {
        self.entries.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

/// Which of the two encodings applies: offsets-dominant (`N >= M`) or
/// values-dominant (`N < M`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    SmallNorm,
    LargeNorm,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::SmallNorm => f.write_str("small-norm"),
            Regime::LargeNorm => f.write_str("large-norm"),
        }
    }
}

/// One (offset, value) step of the decoding walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: u64,
    pub value: i64,
}

/// The ordered blocks of an encoding together with their bit widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockEncoding {
    pub regime: Regime,
    pub blocks: Vec<Block>,
    /// Bits per offset field (1 in the large-norm regime).
    pub offset_bits: u32,
    /// Bits per value field (2 in the small-norm regime).
    pub value_bits: u32,
    pub n: usize,
    pub m: i64,
}

/// Smallest `e >= 0` with `b * 2^e >= a`; the exact value of
/// `ceil(log2(a / b))` for positive integers, clamped at zero.
pub fn ceil_log2_ratio(a: u64, b: u64) -> u32 {
    assert!(a > 0 && b > 0);
    let mut e = 0;
    let mut cap = b;
    while cap < a {
        cap = cap.checked_mul(2).expect("ratio too large");
        e += 1;
    }
    e
}

fn ceil_div(a: u64, b: u64) -> u64 {
    (a + b - 1) / b
}

impl BlockEncoding {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn bits_per_block(&self) -> u32 {
        self.offset_bits + self.value_bits
    }

    /// Flatten to a bit string, offset-then-value per block in the small-norm
    /// regime and value-then-offset in the large-norm regime.
    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.blocks.len() * self.bits_per_block() as usize);
        for b in &self.blocks {
            match self.regime {
                Regime::SmallNorm => {
                    push_uint(&mut bits, b.offset, self.offset_bits);
                    push_small_value(&mut bits, b.value);
                }
                Regime::LargeNorm => {
                    bits.push(b.value < 0);
                    push_uint(&mut bits, b.value.unsigned_abs(), self.value_bits - 1);
                    push_uint(&mut bits, b.offset, self.offset_bits);
                }
            }
        }
        bits
    }

    /// Rebuild an encoding from a bit string (as produced by [`Self::to_bits`],
    /// possibly zero-padded). Trailing all-zero blocks are harmless no-ops.
    pub fn from_bits(regime: Regime, n: usize, m: i64, bits: &[bool]) -> Result<Self> {
        let (offset_bits, value_bits) = field_widths(regime, n, m)?;
        let per = (offset_bits + value_bits) as usize;
        let mut padded = bits.to_vec();
        while padded.len() % per != 0 {
            padded.push(false);
        }
        let mut blocks = Vec::new();
        for chunk in padded.chunks(per) {
            let block = match regime {
                Regime::SmallNorm => {
                    let offset = read_uint(&chunk[..offset_bits as usize]);
                    let value = read_small_value(&chunk[offset_bits as usize..])?;
                    Block { offset, value }
                }
                Regime::LargeNorm => {
                    let neg = chunk[0];
                    let mag = read_uint(&chunk[1..value_bits as usize]) as i64;
                    let offset = read_uint(&chunk[value_bits as usize..]);
                    Block {
                        offset,
                        value: if neg { -mag } else { mag },
                    }
                }
            };
            blocks.push(block);
        }
        while blocks.last() == Some(&Block { offset: 0, value: 0 }) {
            blocks.pop();
        }
        Ok(BlockEncoding {
            regime,
            blocks,
            offset_bits,
            value_bits,
            n,
            m,
        })
    }

    /// The whole encoding packed into the binary expansion of one rational in
    /// `[0, 1)`, most significant block first.
    pub fn packed_scalar(&self) -> Rat {
        pack_bits(&self.to_bits())
    }
}

fn field_widths(regime: Regime, n: usize, m: i64) -> Result<(u32, u32)> {
    if n == 0 || m < 1 {
        return Err(Error::invalid("need N >= 1 and M >= 1"));
    }
    Ok(match regime {
        Regime::SmallNorm => (1 + ceil_log2_ratio(n as u64, m as u64), 2),
        Regime::LargeNorm => (1, 2 + ceil_log2_ratio(m as u64, n as u64)),
    })
}

fn push_uint(bits: &mut Vec<bool>, v: u64, width: u32) {
    assert!(width >= 64 || v < (1u64 << width), "value {v} does not fit in {width} bits");
    for i in (0..width).rev() {
        bits.push((v >> i) & 1 == 1);
    }
}

fn read_uint(bits: &[bool]) -> u64 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
}

fn push_small_value(bits: &mut Vec<bool>, v: i64) {
    match v {
        0 => bits.extend([false, false]),
        1 => bits.extend([true, false]),
        -1 => bits.extend([false, true]),
        _ => panic!("small-norm value out of range: {v}"),
    }
}

fn read_small_value(bits: &[bool]) -> Result<i64> {
    match (bits[0], bits[1]) {
        (false, false) => Ok(0),
        (true, false) => Ok(1),
        (false, true) => Ok(-1),
        (true, true) => Err(Error::malformed("value bits 11 are not a valid increment")),
    }
}

/// Pack a bit string into `sum_i b_i 2^-i`.
pub fn pack_bits(bits: &[bool]) -> Rat {
    if bits.is_empty() {
        return Rat::zero();
    }
    let mut numer = num::BigInt::zero();
    for &b in bits {
        numer = (numer << 1) + if b { 1 } else { 0 };
    }
    Rat::new(numer, num::BigInt::one() << bits.len())
}

/// Offsets-dominant encoder: walk toward each nonzero entry in steps of at
/// most `ceil(N/M)`, then peel it off one unit at a time. Produces at most
/// `2M` blocks.
pub fn encode_small_norm(x: &SparseIntVector) -> Result<BlockEncoding> {
    let n = x.len();
    let m = x.bound();
    let (offset_bits, value_bits) = field_widths(Regime::SmallNorm, n, m)?;
    let hop = ceil_div(n as u64, m as u64);
    let mut r = x.entries().to_vec();
    let mut j = 0usize;
    let mut blocks = Vec::new();
    while let Some(first) = r.iter().position(|v| *v != 0) {
        let l = first + 1; // 1-based index of the first nonzero residual
        let block = if (l - j) as u64 <= hop {
            let offset = (l - j) as u64;
            j = l;
            let value = r[j - 1].signum();
            r[j - 1] -= value;
            Block { offset, value }
        } else {
            j += hop as usize;
            Block { offset: hop, value: 0 }
        };
        blocks.push(block);
    }
    assert!(blocks.len() as i64 <= 2 * m, "block count exceeds 2M");
    Ok(BlockEncoding {
        regime: Regime::SmallNorm,
        blocks,
        offset_bits,
        value_bits,
        n,
        m,
    })
}

/// Values-dominant encoder: advance the index one step at a time and capture
/// each entry in chunks of at most `ceil(M/N)`. Produces at most `2N` blocks.
pub fn encode_large_norm(x: &SparseIntVector) -> Result<BlockEncoding> {
    let n = x.len();
    let m = x.bound();
    let (offset_bits, value_bits) = field_widths(Regime::LargeNorm, n, m)?;
    let chunk = ceil_div(m as u64, n as u64) as i64;
    let mut r = x.entries().to_vec();
    let mut j = 0usize;
    let mut blocks = Vec::new();
    while r.iter().any(|v| *v != 0) {
        let offset = if j == 0 || r[j - 1] == 0 {
            j += 1;
            1
        } else {
            0
        };
        let value = if r[j - 1].abs() <= chunk {
            let v = r[j - 1];
            r[j - 1] = 0;
            v
        } else {
            let v = r[j - 1].signum() * chunk;
            r[j - 1] -= v;
            v
        };
        blocks.push(Block { offset, value });
    }
    assert!(blocks.len() <= 2 * n, "block count exceeds 2N");
    Ok(BlockEncoding {
        regime: Regime::LargeNorm,
        blocks,
        offset_bits,
        value_bits,
        n,
        m,
    })
}

/// Replay the blocks: shift the index by each offset and add each value.
pub fn decode(enc: &BlockEncoding, n: usize) -> Result<SparseIntVector> {
    let mut x = vec![0i64; n];
    let mut j = 0usize;
    for b in &enc.blocks {
        j += b.offset as usize;
        if b.value != 0 {
            if j < 1 || j > n {
                return Err(Error::malformed(format!("decoded index {j} outside 1..={n}")));
            }
            x[j - 1] += b.value;
        }
    }
    SparseIntVector::new(x, enc.m)
}

/// Split at a magnitude threshold, keeping signs in both parts so the parts
/// sum back to the original vector.
#[derive(Debug, Clone)]
pub struct BigSmallSplit {
    pub threshold: i64,
    /// (1-based index, signed value) of entries with |value| >= threshold.
    pub big: Vec<(usize, i64)>,
    /// The remaining entries, zero where the big part is supported.
    pub small: Vec<i64>,
}

pub fn split_threshold(x: &SparseIntVector, threshold: i64) -> Result<BigSmallSplit> {
    if threshold < 1 {
        return Err(Error::invalid("threshold must be at least 1"));
    }
    let mut big = Vec::new();
    let mut small = vec![0i64; x.len()];
    for (i, &v) in x.entries().iter().enumerate() {
        if v.abs() >= threshold {
            big.push((i + 1, v));
        } else {
            small[i] = v;
        }
    }
    Ok(BigSmallSplit {
        threshold,
        big,
        small,
    })
}

impl BigSmallSplit {
    pub fn recombine(&self, n: usize) -> Vec<i64> {
        let mut out = self.small.clone();
        out.resize(n, 0);
        for &(i, v) in &self.big {
            out[i - 1] += v;
        }
        out
    }
}

/// One decoding step as a network on `(x, packed-bits, sum)`:
/// consume the leading block `(f, t)` and produce
/// `(x - f, remaining bits, sum + t * delta(x - f))`.
///
/// `alpha` is the offset width (small-norm) or the value width including its
/// sign bit (large-norm); `beta` bounds the number of blocks in the packed
/// scalar. Depth is `4*alpha + 16` (small-norm) or `4*alpha + 8` (large-norm),
/// width 15 in both regimes.
pub fn step_net(regime: Regime, alpha: u32, beta: u32) -> ReluNet {
    assert!(alpha >= 1 && beta >= 1);
    match regime {
        Regime::SmallNorm => step_net_small(alpha, beta),
        Regime::LargeNorm => step_net_large(alpha, beta),
    }
}

fn step_net_small(alpha: u32, beta: u32) -> ReluNet {
    let total_bits = beta * (alpha + 2);
    let one = Rat::one;
    // (x, packed, sum) -> (x, rest, f1, sum) -> (x - f1, rest, sum)
    let extract_f = bit_extract_net(total_bits, alpha).unwrap();
    let mut sub = AffineLayer::new(3, 4);
    sub.set(0, 0, one());
    sub.set(0, 2, -one());
    sub.set(1, 1, one());
    sub.set(2, 3, one());
    let mut net = apply_to_coords(&extract_f, 3, 1).then_affine(sub);
    // Two sign gates, each: duplicate z, tent it, pull one value bit, and add
    // (or subtract) sigma(tent + bit - 1) into the running sum.
    for negative in [false, true] {
        let mut dup = AffineLayer::new(4, 3);
        dup.set(0, 0, one());
        dup.set(1, 0, one());
        dup.set(2, 1, one());
        dup.set(3, 2, one());
        net = net
            .then_affine(dup)
            .then(&apply_to_coords(&integer_delta_net(), 4, 1))
            .then(&apply_to_coords(&bit_extract_net(total_bits, 1).unwrap(), 4, 2));
        // state: (z, h, rest, bit, sum) -> (z, h + bit - 1, rest, sum)
        let mut gate = AffineLayer::new(4, 5);
        gate.set(0, 0, one());
        gate.set(1, 1, one());
        gate.set(1, 3, one());
        gate.set_bias(1, -one());
        gate.set(2, 2, one());
        gate.set(3, 4, one());
        net = net.then_affine(gate).then(&apply_to_coords(&ReluNet::relu(1), 4, 1));
        let mut fold = AffineLayer::new(3, 4);
        fold.set(0, 0, one());
        fold.set(1, 2, one());
        fold.set(2, 3, one());
        fold.set(2, 1, if negative { -one() } else { one() });
        net = net.then_affine(fold);
    }
    net.with_width(15)
}

fn step_net_large(alpha: u32, beta: u32) -> ReluNet {
    assert!(alpha >= 2, "large-norm value field carries a sign bit plus magnitude");
    let total_bits = beta * (alpha + 1);
    let one = Rat::one;
    let w = rat_int(1i64 << (alpha - 1));
    // (x, packed, sum): pull the whole signed value field as the integer
    // v = sign * 2^(alpha-1) + magnitude, then the offset bit.
    let mut net = apply_to_coords(&bit_extract_net(total_bits, alpha).unwrap(), 3, 1);
    // state: (x, rest, v, sum)
    net = net.then(&apply_to_coords(&bit_extract_net(total_bits, 1).unwrap(), 4, 1));
    // state: (x, rest, f1, v, sum) -> (z = x - f1, z, v, rest, sum)
    let mut arrange = AffineLayer::new(5, 5);
    arrange.set(0, 0, one());
    arrange.set(0, 2, -one());
    arrange.set(1, 0, one());
    arrange.set(1, 2, -one());
    arrange.set(2, 3, one());
    arrange.set(3, 1, one());
    arrange.set(4, 4, one());
    net = net.then_affine(arrange);
    // In parallel: tent the duplicate of z, and split v into the positive
    // magnitude u (zero when the sign bit is set) and negative magnitude nv.
    let split_v = magnitude_split_net(alpha);
    let block = concat(&integer_delta_net(), &pad_depth(&split_v, 3).unwrap()).unwrap();
    net = net.then(&apply_to_coords(&block, 5, 1));
    // state: (z, h, u, nv, rest, sum) -> gates sigma(u - W(1-h)), sigma(nv - W(1-h))
    let mut pre_gate = AffineLayer::new(5, 6);
    pre_gate.set(0, 2, one());
    pre_gate.set(0, 1, w.clone());
    pre_gate.set_bias(0, -w.clone());
    pre_gate.set(1, 3, one());
    pre_gate.set(1, 1, w.clone());
    pre_gate.set_bias(1, -w);
    pre_gate.set(2, 0, one());
    pre_gate.set(3, 4, one());
    pre_gate.set(4, 5, one());
    net = net.then_affine(pre_gate).then(&apply_to_coords(&ReluNet::relu(2), 5, 0));
    // state: (gate+, gate-, z, rest, sum) -> (z, rest, sum + gate+ - gate-)
    let mut fold = AffineLayer::new(3, 5);
    fold.set(0, 2, one());
    fold.set(1, 3, one());
    fold.set(2, 4, one());
    fold.set(2, 0, one());
    fold.set(2, 1, -one());
    net = net.then_affine(fold);
    net.with_width(15)
}

/// `v = sign * 2^(alpha-1) + mag  ->  (mag if sign bit clear else 0,
///                                     mag if sign bit set else 0)`
/// for integers `0 <= v < 2^alpha`, in a single ReLU layer.
fn magnitude_split_net(alpha: u32) -> ReluNet {
    let w = 1i64 << (alpha - 1);
    let one = Rat::one;
    // The positive magnitude follows the interpolation through
    // (0,0), ..., (W-1, W-1), (W, 0), (W+1, 0), ...; the negative one is
    // sigma(v - W).
    let mut a0 = AffineLayer::new(4, 1);
    a0.set(0, 0, one());
    a0.set(1, 0, -one());
    a0.set(2, 0, one());
    a0.set_bias(2, rat_int(-(w - 1)));
    a0.set(3, 0, one());
    a0.set_bias(3, rat_int(-w));
    let mut a1 = AffineLayer::new(2, 4);
    a1.set(0, 0, one());
    a1.set(0, 1, -one());
    a1.set(0, 2, rat_int(-w));
    a1.set(0, 3, rat_int(w - 1));
    a1.set(1, 3, one());
    ReluNet::from_layers(vec![a0, a1], Some(4)).unwrap()
}

/// Where the decoding walk is cut into chunks of bounded length, which decode
/// index each chunk starts at, and the packed bits each chunk consumes.
struct BlockPlan {
    start_index: Vec<u64>,
    chunk_bits: Vec<Rat>,
    /// Longest chunk in blocks; every chunk is padded to this many steps.
    max_chunk: u64,
}

fn block_plan(enc: &BlockEncoding, stride: u64, beta: u64, n: usize) -> BlockPlan {
    let r = enc.blocks.len() as u64;
    assert!(r >= 1);
    assert!(enc.blocks[0].offset > 0, "first block always moves the index");
    // Maximal runs of zero-offset blocks, as half-open 1-based ranges.
    let mut runs: Vec<(u64, u64)> = Vec::new();
    for (idx, b) in enc.blocks.iter().enumerate() {
        let pos = idx as u64 + 1;
        if b.offset == 0 {
            match runs.last_mut() {
                Some(run) if run.1 == pos => run.1 = pos + 1,
                _ => runs.push((pos, pos + 1)),
            }
        }
    }
    let in_run = |pos: u64| runs.iter().find(|run| run.0 <= pos && pos < run.1);
    let rho = ceil_div(r, stride);
    let mut cuts = Vec::with_capacity(rho as usize + 1);
    for k in 0..rho {
        let anchor = 1 + k * stride;
        // Never cut inside a zero-offset run; back up to just before it.
        let cut = match in_run(anchor) {
            Some(run) => run.0 - 1,
            None => anchor,
        };
        if let Some(&prev) = cuts.last() {
            assert!(cut > prev, "chunk boundaries must advance");
        } else {
            assert_eq!(cut, 1);
        }
        cuts.push(cut);
    }
    cuts.push(r + 1);
    // Prefix offsets give the decode index before each block.
    let mut prefix = vec![0u64; r as usize + 1];
    for (i, b) in enc.blocks.iter().enumerate() {
        prefix[i + 1] = prefix[i] + b.offset;
    }
    let mut start_index = Vec::with_capacity(rho as usize);
    let mut chunk_bits = Vec::with_capacity(rho as usize);
    let mut max_chunk = 1u64;
    let bits = enc.to_bits();
    let per = enc.bits_per_block() as usize;
    for k in 0..rho as usize {
        let (lo, hi) = (cuts[k], cuts[k + 1]);
        assert!(hi - lo <= beta, "chunk of {} blocks exceeds capacity {beta}", hi - lo);
        max_chunk = max_chunk.max(hi - lo);
        start_index.push(prefix[lo as usize - 1]);
        chunk_bits.push(pack_bits(&bits[(lo as usize - 1) * per..(hi as usize - 1) * per]));
    }
    for w in start_index.windows(2) {
        assert!(w[0] < w[1], "chunk start indices must increase");
    }
    if let Some(&last) = start_index.last() {
        assert!(last < n as u64, "last chunk must cover an index");
    }
    BlockPlan {
        start_index,
        chunk_bits,
        max_chunk,
    }
}

/// Step function through the plateaus `value_k` on `start_k < x <= start_{k+1}`,
/// ramping inside the unit gap after each plateau.
fn plateau_net(starts: &[u64], values: &[Rat]) -> ReluNet {
    assert_eq!(starts.len(), values.len());
    let rho = starts.len();
    if rho == 1 {
        let mut a = AffineLayer::new(1, 1);
        a.set_bias(0, values[0].clone());
        return ReluNet::affine(a);
    }
    let mut knots = Vec::new();
    let mut vals: Vec<Rat> = Vec::new();
    for k in 1..rho {
        let edge = starts[k];
        // Plateau k-1 holds through start_k; plateau k begins at start_k + 1.
        if knots.last() == Some(&rat_int(edge as i64)) {
            assert_eq!(vals.last(), Some(&values[k - 1]));
        } else {
            knots.push(rat_int(edge as i64));
            vals.push(values[k - 1].clone());
        }
        knots.push(rat_int(edge as i64 + 1));
        vals.push(values[k].clone());
    }
    pwl_to_net(&Breakpoints::new(knots, vals, Rat::zero(), Rat::zero()).unwrap())
}

fn part_net(enc: BlockEncoding, stride: u64, alpha: u32, regime: Regime, n: usize) -> (ReluNet, u32) {
    if enc.blocks.is_empty() {
        return (ReluNet::affine(AffineLayer::new(1, 1)), 0);
    }
    let bits_per_block = enc.bits_per_block();
    let beta = 2 * stride;
    let plan = block_plan(&enc, stride, beta, n);
    let start_vals: Vec<Rat> = plan.start_index.iter().map(|&j| rat_int(j as i64)).collect();
    let index_net = plateau_net(&plan.start_index, &start_vals);
    let bits_net = plateau_net(&plan.start_index, &plan.chunk_bits);
    // n -> (n - J(n), R(n), 0)
    let one = Rat::one;
    let mut triple = AffineLayer::new(3, 1);
    triple.set(0, 0, one());
    triple.set(1, 0, one());
    triple.set(2, 0, one());
    let mut net = ReluNet::affine(triple)
        .then(&apply_to_coords(&index_net, 3, 0))
        .then(&apply_to_coords(&bits_net, 3, 1));
    let mut sub = AffineLayer::new(3, 3);
    sub.set(0, 2, one());
    sub.set(0, 0, -one());
    sub.set(1, 1, one());
    net = net.then_affine(sub);
    // Uniform chunk length: the longest chunk, never more than 2*stride.
    let steps = plan.max_chunk;
    let step = step_net(regime, alpha, steps as u32);
    for _ in 0..steps {
        net = net.then(&step);
    }
    let net = net.then_affine(AffineLayer::selector(3, &[2])).with_width(15);
    (net, steps as u32 * bits_per_block)
}

/// Network reproducing a vector with `linf < s` and `l1 <= m` at the integer
/// points `1..=n`, in the offsets-dominant regime. Width 15; depth at most
/// `8M/S + 8S(5 + ceil(log2(N/M))) + 4`.
pub fn small_norm_part_net(xs: &[i64], s: i64, n: usize, m: i64) -> Result<ReluNet> {
    validate_part(xs, s, n, m)?;
    let x = SparseIntVector::new(xs.to_vec(), m)?;
    let enc = encode_small_norm(&x)?;
    let alpha = enc.offset_bits;
    let (net, _) = part_net(enc, s as u64, alpha, Regime::SmallNorm, n);
    let bound = small_part_depth_bound(n, m, s);
    assert!(
        (net.depth() as f64) <= bound,
        "depth {} exceeds bound {bound}",
        net.depth()
    );
    Ok(net)
}

/// Values-dominant analogue of [`small_norm_part_net`]. Width 15; depth at
/// most `8M/S + 8(SN/M + 1)(4 + ceil(log2(M/N))) + 4`.
pub fn large_norm_part_net(xs: &[i64], s: i64, n: usize, m: i64) -> Result<ReluNet> {
    validate_part(xs, s, n, m)?;
    let x = SparseIntVector::new(xs.to_vec(), m)?;
    let enc = encode_large_norm(&x)?;
    let alpha = enc.value_bits;
    let chunk_stride = ceil_div(s as u64 * n as u64, m as u64);
    let (net, _) = part_net(enc, chunk_stride, alpha, Regime::LargeNorm, n);
    let bound = large_part_depth_bound(n, m, s);
    assert!(
        (net.depth() as f64) <= bound,
        "depth {} exceeds bound {bound}",
        net.depth()
    );
    Ok(net)
}

fn validate_part(xs: &[i64], s: i64, n: usize, m: i64) -> Result<()> {
    if xs.len() != n {
        return Err(Error::dims(n, xs.len(), "part vector length"));
    }
    if s < 1 {
        return Err(Error::invalid("threshold must be at least 1"));
    }
    let linf = xs.iter().map(|v| v.abs()).max().unwrap_or(0);
    if linf >= s {
        return Err(Error::invalid(format!("sup norm {linf} must be below threshold {s}")));
    }
    let l1: i64 = xs.iter().map(|v| v.abs()).sum();
    if l1 > m {
        return Err(Error::invalid(format!("l1 norm {l1} exceeds {m}")));
    }
    Ok(())
}

pub fn small_part_depth_bound(n: usize, m: i64, s: i64) -> f64 {
    let log = ceil_log2_ratio(n as u64, m as u64) as f64;
    8.0 * m as f64 / s as f64 + 8.0 * s as f64 * (5.0 + log) + 4.0
}

pub fn large_part_depth_bound(n: usize, m: i64, s: i64) -> f64 {
    let log = ceil_log2_ratio(m as u64, n as u64) as f64;
    let t = s as f64 * n as f64 / m as f64 + 1.0;
    8.0 * m as f64 / s as f64 + 8.0 * t * (4.0 + log) + 4.0
}

/// A built sparse-vector network together with its audit data.
#[derive(Debug)]
pub struct SparseNetBuild {
    pub net: ReluNet,
    pub regime: Regime,
    pub threshold: i64,
    /// Hard depth bound implied by the split and the part-net depth formulas.
    pub depth_bound: f64,
    /// Length of the longest packed bit string inside the network; keep it
    /// under 53 if the network is to be evaluated exactly in f64.
    pub max_packed_bits: u32,
}

/// The depth scale the sparse representation promises: `sqrt(M(1 + log2(N/M)))`
/// when `N >= M` and `sqrt(N(1 + log2(M/N)))` otherwise.
pub fn theorem_depth_scale(n: usize, m: i64) -> f64 {
    if n as i64 >= m {
        (m as f64 * (1.0 + (n as f64 / m as f64).log2().max(0.0))).sqrt()
    } else {
        (n as f64 * (1.0 + (m as f64 / n as f64).log2().max(0.0))).sqrt()
    }
}

/// Build a width-17 network `g` with `g(i) = x_i` for `i = 1..=N`: entries at
/// least the threshold in magnitude become a piecewise-linear bump train, the
/// rest go through the block-decoding machinery, and the two parts are summed
/// by carrying one value past the other.
pub fn sparse_vector_net(x: &SparseIntVector) -> Result<SparseNetBuild> {
    let n = x.len();
    let m = x.bound();
    let small_regime = n as i64 >= m;
    let s_opt = if small_regime {
        let log = ceil_log2_ratio(n as u64, m as u64) as f64;
        (m as f64 / (5.0 + log)).sqrt()
    } else {
        let log = ceil_log2_ratio(m as u64, n as u64) as f64;
        m as f64 * (4.0 + log).sqrt() / (n as f64).sqrt()
    };
    let s = (s_opt.ceil() as i64).clamp(1, x.linf().saturating_add(1).max(1));
    let split = split_threshold(x, s)?;

    let big_net = bump_train_net(&split.big);
    let (small_net, max_packed_bits) = if small_regime {
        let enc = encode_small_norm(&SparseIntVector::new(split.small.clone(), m)?)?;
        let alpha = enc.offset_bits;
        part_net(enc, s as u64, alpha, Regime::SmallNorm, n)
    } else {
        let enc = encode_large_norm(&SparseIntVector::new(split.small.clone(), m)?)?;
        let alpha = enc.value_bits;
        let stride = ceil_div(s as u64 * n as u64, m as u64);
        part_net(enc, stride, alpha, Regime::LargeNorm, n)
    };
    let depth_bound = 3.0 * m as f64 / s as f64
        + if small_regime {
            small_part_depth_bound(n, m, s)
        } else {
            large_part_depth_bound(n, m, s)
        };

    // n -> (n, n) -> (small(n), n) -> (small(n), big(n)) -> sum
    let one = Rat::one;
    let mut dup = AffineLayer::new(2, 1);
    dup.set(0, 0, one());
    dup.set(1, 0, one());
    let mut sum = AffineLayer::new(1, 2);
    sum.set(0, 0, one());
    sum.set(0, 1, one());
    let mut net = ReluNet::affine(dup)
        .then(&apply_to_coords(&small_net, 2, 0))
        .then(&apply_to_coords(&big_net, 2, 1))
        .then_affine(sum);
    if !net.is_affine() {
        net = net.with_width(17);
    }
    assert!(
        (net.depth() as f64) <= depth_bound,
        "sparse net depth {} exceeds bound {depth_bound}",
        net.depth()
    );
    Ok(SparseNetBuild {
        net,
        regime: if small_regime { Regime::SmallNorm } else { Regime::LargeNorm },
        threshold: s,
        depth_bound,
        max_packed_bits,
    })
}

/// Piecewise-linear function hitting `value` at each listed integer index and
/// zero at all other integers; at most 3 pieces per support point.
fn bump_train_net(support: &[(usize, i64)]) -> ReluNet {
    if support.is_empty() {
        return ReluNet::affine(AffineLayer::new(1, 1));
    }
    let mut nodes: std::collections::BTreeMap<i64, i64> = Default::default();
    for &(i, v) in support {
        nodes.insert(i as i64, v);
    }
    let anchors: Vec<i64> = nodes.keys().copied().collect();
    for i in anchors {
        nodes.entry(i - 1).or_insert(0);
        nodes.entry(i + 1).or_insert(0);
    }
    let knots: Vec<Rat> = nodes.keys().map(|&i| rat_int(i)).collect();
    let values: Vec<Rat> = nodes.values().map(|&v| rat_int(v)).collect();
    pwl_to_net(&Breakpoints::new(knots, values, Rat::zero(), Rat::zero()).unwrap())
}

/// All vectors in `Z^n` with `l1` norm at most `m` (test-sized inputs only).
pub fn enumerate_ball(n: usize, m: i64) -> Vec<Vec<i64>> {
    fn rec(n: usize, budget: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if n == 0 {
            out.push(cur.clone());
            return;
        }
        for v in -budget..=budget {
            cur.push(v);
            rec(n - 1, budget - v.abs(), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, m, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::DEFAULT_PRECISION_BITS;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_vector(rng: &mut StdRng, n: usize, m: i64) -> SparseIntVector {
        let mut x = vec![0i64; n];
        let mut budget = rng.gen_range(0..=m);
        while budget > 0 {
            let i = rng.gen_range(0..n);
            let amt = rng.gen_range(1..=budget);
            x[i] += if rng.gen_bool(0.5) { amt } else { -amt };
            budget -= amt;
        }
        // The scatter can cancel, so the result respects any bound >= l1.
        SparseIntVector::new(x, m).unwrap()
    }

    #[test]
    fn encode_small_worked_example() {
        let x = SparseIntVector::new(vec![0, 1, -1], 2).unwrap();
        let enc = encode_small_norm(&x).unwrap();
        assert_eq!(
            enc.blocks,
            vec![Block { offset: 2, value: 1 }, Block { offset: 1, value: -1 }]
        );
        assert_eq!(enc.offset_bits, 2);
        let bits: Vec<u8> = enc.to_bits().iter().map(|&b| b as u8).collect();
        assert_eq!(bits, vec![1, 0, 1, 0, 0, 1, 0, 1]);
        assert_eq!(decode(&enc, 3).unwrap(), x);
    }

    #[test]
    fn encode_zero_is_empty() {
        let x = SparseIntVector::new(vec![0, 0, 0, 0], 3).unwrap();
        assert!(encode_small_norm(&x).unwrap().blocks.is_empty());
        assert!(encode_large_norm(&x).unwrap().blocks.is_empty());
        assert_eq!(decode(&encode_small_norm(&x).unwrap(), 4).unwrap(), x);
    }

    #[test]
    fn encode_large_worked_example() {
        let x = SparseIntVector::new(vec![5], 5).unwrap();
        let enc = encode_large_norm(&x).unwrap();
        assert_eq!(enc.blocks, vec![Block { offset: 1, value: 5 }]);
        assert_eq!(enc.value_bits, 2 + 3);
        assert_eq!(decode(&enc, 1).unwrap(), x);
    }

    #[test]
    fn l1_violation_is_rejected() {
        assert!(SparseIntVector::new(vec![2, 2], 3).is_err());
    }

    #[test]
    fn round_trip_exhaustive_small_cases() {
        for n in 1..=4usize {
            for m in 1..=(8 - n as i64).max(1) {
                for xs in enumerate_ball(n, m) {
                    let x = SparseIntVector::new(xs, m).unwrap();
                    let e1 = encode_small_norm(&x).unwrap();
                    assert!(e1.block_count() as i64 <= 2 * m);
                    assert_eq!(decode(&e1, n).unwrap(), x);
                    let e2 = encode_large_norm(&x).unwrap();
                    assert!(e2.block_count() <= 2 * n);
                    assert_eq!(decode(&e2, n).unwrap(), x);
                }
            }
        }
    }

    #[test]
    fn round_trip_random_both_regimes() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..2000 {
            let n = rng.gen_range(1..=64);
            let m = rng.gen_range(1..=4 * n as i64);
            let x = random_vector(&mut rng, n, m);
            assert_eq!(decode(&encode_small_norm(&x).unwrap(), n).unwrap(), x);
            assert_eq!(decode(&encode_large_norm(&x).unwrap(), n).unwrap(), x);
        }
    }

    #[test]
    fn bit_round_trip() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..200 {
            let n = rng.gen_range(1..=32);
            let m = rng.gen_range(1..=3 * n as i64);
            let x = random_vector(&mut rng, n, m);
            for enc in [encode_small_norm(&x).unwrap(), encode_large_norm(&x).unwrap()] {
                let back = BlockEncoding::from_bits(enc.regime, n, m, &enc.to_bits()).unwrap();
                assert_eq!(back, enc);
            }
        }
    }

    #[test]
    fn split_threshold_cases() {
        let x = SparseIntVector::new(vec![4, -1, 0, -6, 2], 13).unwrap();
        let s = split_threshold(&x, 7).unwrap();
        assert!(s.big.is_empty());
        let s1 = split_threshold(&x, 1).unwrap();
        assert!(s1.small.iter().all(|&v| v == 0));
        let s3 = split_threshold(&x, 3).unwrap();
        assert_eq!(s3.big, vec![(1, 4), (4, -6)]);
        assert_eq!(s3.recombine(5), x.entries());
    }

    fn ev1(net: &ReluNet, x: i64) -> Rat {
        net.eval_rat(&[rat_int(x)], DEFAULT_PRECISION_BITS).unwrap()[0].clone()
    }

    #[test]
    fn step_net_small_zero_block_is_noop() {
        let step = step_net(Regime::SmallNorm, 2, 4);
        assert_eq!(step.depth(), 4 * 2 + 16);
        assert_eq!(step.width(), Some(15));
        let state = vec![rat_int(3), Rat::zero(), rat_int(5)];
        let out = step.eval_rat(&state, DEFAULT_PRECISION_BITS).unwrap();
        assert_eq!(out, state);
    }

    #[test]
    fn step_net_small_consumes_one_block() {
        // Two blocks of (offset, increment) packed as 0.[10 10][01 01]:
        // the first block moves by 2 and adds +1.
        let step = step_net(Regime::SmallNorm, 2, 4);
        let packed = pack_bits(&[true, false, true, false, false, true, false, true]);
        let rest = pack_bits(&[false, true, false, true]);
        let out = step
            .eval_rat(&[rat_int(2), packed, rat_int(0)], DEFAULT_PRECISION_BITS)
            .unwrap();
        assert_eq!(out, vec![rat_int(0), rest.clone(), rat_int(1)]);
        // Re-running consumes (1, -1); the index has moved past zero.
        let out2 = step.eval_rat(&out, DEFAULT_PRECISION_BITS).unwrap();
        assert_eq!(out2, vec![rat_int(-1), Rat::zero(), rat_int(1)]);
    }

    #[test]
    fn step_net_large_suppressed_add() {
        // One block, value -3 then offset 1, alpha = 3: bits [1 11][1].
        let step = step_net(Regime::LargeNorm, 3, 4);
        assert_eq!(step.depth(), 4 * 3 + 8);
        assert_eq!(step.width(), Some(15));
        let packed = pack_bits(&[true, true, true, true]);
        let out = step
            .eval_rat(&[rat_int(0), packed.clone(), rat_int(0)], DEFAULT_PRECISION_BITS)
            .unwrap();
        assert_eq!(out, vec![rat_int(-1), Rat::zero(), rat_int(0)]);
        // The same block hit at the right index subtracts 3.
        let out2 = step
            .eval_rat(&[rat_int(1), packed, rat_int(2)], DEFAULT_PRECISION_BITS)
            .unwrap();
        assert_eq!(out2, vec![rat_int(0), Rat::zero(), rat_int(-1)]);
    }

    #[test]
    fn magnitude_split_cases() {
        let net = magnitude_split_net(3);
        for v in 0..8i64 {
            let out = net.eval_rat(&[rat_int(v)], DEFAULT_PRECISION_BITS).unwrap();
            let (u, nv) = if v < 4 { (v, 0) } else { (0, v - 4) };
            assert_eq!(out, vec![rat_int(u), rat_int(nv)], "v={v}");
        }
    }

    #[test]
    fn small_part_net_zero_vector() {
        let net = small_norm_part_net(&[0; 8], 2, 8, 4).unwrap();
        assert_eq!(net.depth(), 0);
        for n in 1..=8 {
            assert_eq!(ev1(&net, n), rat_int(0));
        }
    }

    #[test]
    fn small_part_net_reproduces_entries() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..12 {
            let n = 24usize;
            let m = 8i64;
            let x = random_vector(&mut rng, n, m);
            let s = x.linf().max(1) + 1;
            let net = small_norm_part_net(x.entries(), s, n, x.bound()).unwrap();
            for i in 1..=n {
                assert_eq!(ev1(&net, i as i64), rat_int(x.entries()[i - 1]), "entry {i}");
            }
        }
    }

    #[test]
    fn large_part_net_reproduces_entries() {
        let mut rng = StdRng::seed_from_u64(24);
        for _ in 0..12 {
            let n = 6usize;
            let m = 64i64;
            let x = random_vector(&mut rng, n, m);
            let s = x.linf().max(1) + 1;
            let net = large_norm_part_net(x.entries(), s, n, m).unwrap();
            for i in 1..=n {
                assert_eq!(ev1(&net, i as i64), rat_int(x.entries()[i - 1]), "entry {i}");
            }
        }
    }

    #[test]
    fn sparse_net_zero_and_unit() {
        let zero = SparseIntVector::new(vec![0; 8], 1).unwrap();
        let b = sparse_vector_net(&zero).unwrap();
        for n in 1..=8 {
            assert_eq!(ev1(&b.net, n), rat_int(0));
        }
        let mut e5 = vec![0i64; 16];
        e5[4] = 1;
        let b = sparse_vector_net(&SparseIntVector::new(e5, 1).unwrap()).unwrap();
        for n in 1..=16i64 {
            assert_eq!(ev1(&b.net, n), rat_int((n == 5) as i64));
        }
    }

    #[test]
    fn sparse_net_fidelity_random() {
        let mut rng = StdRng::seed_from_u64(25);
        for _ in 0..8 {
            let n = 32usize;
            let m = 16i64;
            let x = random_vector(&mut rng, n, m);
            let b = sparse_vector_net(&SparseIntVector::new(x.entries().to_vec(), m).unwrap()).unwrap();
            if !b.net.is_affine() {
                assert_eq!(b.net.width(), Some(17));
            }
            assert!((b.net.depth() as f64) <= b.depth_bound);
            for i in 1..=n {
                assert_eq!(ev1(&b.net, i as i64), rat_int(x.entries()[i - 1]));
            }
        }
    }

    #[test]
    fn sparse_net_large_regime_fidelity() {
        let mut rng = StdRng::seed_from_u64(26);
        for _ in 0..6 {
            let n = 5usize;
            let m = 60i64;
            let x = random_vector(&mut rng, n, m);
            let b = sparse_vector_net(&SparseIntVector::new(x.entries().to_vec(), m).unwrap()).unwrap();
            assert_eq!(b.regime, Regime::LargeNorm);
            for i in 1..=n {
                assert_eq!(ev1(&b.net, i as i64), rat_int(x.entries()[i - 1]));
            }
        }
    }
}

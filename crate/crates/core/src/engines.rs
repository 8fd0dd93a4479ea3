//! Interchangeable CPU kernels for the dilated causal channel-wise temporal
//! convolution
//!
//! ```text
//! H[t][c] = Σ_i W[c][i] · X[t − (k−1−i)·d][c] + b[c],   X[j] = 0 for j < 0
//! ```
//!
//! and its gradients. Every kernel walks both layouts natively through the
//! lane/time-stride addressing of [`TemporalTensor`], so no layout
//! conversion is ever needed. Float kernels accumulate in `f64`; the integer
//! shift kernel accumulates in `i64` and saturates to `i32`.
//!
//! For a fixed output element all float kernels add the taps in ascending
//! `i`, which makes the shift kernel on a float carrier bit-identical to the
//! direct loop on dequantized weights.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::quant::{dequantize, saturate_i32, shift_mul_int, ShiftFloat, ShiftWeights};
use crate::tensor::{Element, Layout, Matrix, TemporalTensor};

/// Float element types the float kernels accept.
pub trait Real: Element + ShiftFloat {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Real for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EngineKind {
    /// Plain loop over lanes, time and taps.
    DirectLoop,
    /// Dense per-channel `T × T` Toeplitz operator times the input.
    MatMul,
    /// Power-of-two weights applied through shifts; no multiplications.
    ShiftInt,
    /// Direct loop tiled over lanes and time.
    BlockedDirect,
}

impl EngineKind {
    pub const ALL: [EngineKind; 4] =
        [EngineKind::DirectLoop, EngineKind::MatMul, EngineKind::ShiftInt, EngineKind::BlockedDirect];

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::DirectLoop => "direct",
            EngineKind::MatMul => "matmul",
            EngineKind::ShiftInt => "shift",
            EngineKind::BlockedDirect => "blocked",
        }
    }

    pub fn parse(s: &str) -> Result<EngineKind> {
        match s {
            "direct" | "DirectLoop" => Ok(EngineKind::DirectLoop),
            "matmul" | "MatMul" => Ok(EngineKind::MatMul),
            "shift" | "ShiftInt" => Ok(EngineKind::ShiftInt),
            "blocked" | "BlockedDirect" => Ok(EngineKind::BlockedDirect),
            other => Err(Error::UnknownEngine(other.to_string())),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Block sizes tried for [`EngineKind::BlockedDirect`].
pub const BLOCK_SIZES: [usize; 4] = [8, 16, 32, 64];

/// Arithmetic performed by a kernel call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub adds: u64,
    pub muls: u64,
    pub shifts: u64,
    pub copies: u64,
    /// Integer results clamped to the `i32` range.
    pub saturations: u64,
}

impl OpCounters {
    pub fn merge(&mut self, other: &OpCounters) {
        self.adds += other.adds;
        self.muls += other.muls;
        self.shifts += other.shifts;
        self.copies += other.copies;
        self.saturations += other.saturations;
    }
}

/// Weights handed to a forward kernel.
#[derive(Clone, Copy, Debug)]
pub enum Kernel<'a> {
    Float(&'a Matrix),
    Shift(&'a ShiftWeights),
}

impl Kernel<'_> {
    pub fn rows(&self) -> usize {
        match self {
            Kernel::Float(w) => w.rows(),
            Kernel::Shift(q) => q.rows(),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Kernel::Float(w) => w.cols(),
            Kernel::Shift(q) => q.cols(),
        }
    }
}

fn check_forward<E: Element>(
    x: &TemporalTensor<E>,
    rows: usize,
    k: usize,
    bias_len: Option<usize>,
    d: usize,
) -> Result<()> {
    if rows != x.dims().c {
        return Err(Error::ChannelMismatch { expected: rows, got: x.dims().c });
    }
    if k == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!("order k={k} and dilation d={d} must be positive")));
    }
    if let Some(len) = bias_len {
        if len != rows {
            return Err(Error::ShapeMismatch(format!("bias has {len} entries for {rows} channels")));
        }
    }
    Ok(())
}

fn check_same_shape<A: Element, B: Element>(a: &TemporalTensor<A>, b: &TemporalTensor<B>) -> Result<()> {
    if a.dims() != b.dims() || a.layout() != b.layout() {
        return Err(Error::ShapeMismatch(format!(
            "{:?}/{} vs {:?}/{}",
            a.dims(),
            a.layout(),
            b.dims(),
            b.layout()
        )));
    }
    Ok(())
}

/// Number of in-range taps for one lane of length `t_len`.
pub fn in_range_taps(t_len: usize, k: usize, d: usize) -> u64 {
    (0..k).map(|i| t_len.saturating_sub((k - 1 - i) * d) as u64).sum()
}

/// Direct loop forward pass with float weights.
pub fn conv_forward_direct<F: Real>(
    x: &TemporalTensor<F>,
    w: &Matrix,
    bias: Option<&[f64]>,
    d: usize,
    counters: &mut OpCounters,
) -> Result<TemporalTensor<F>> {
    let k = w.cols();
    check_forward(x, w.rows(), k, bias.map(<[f64]>::len), d)?;
    let t_len = x.dims().t;
    let ts = x.time_stride();
    let src = x.data();
    let mut out = vec![F::default(); x.len()];
    for lane in x.lanes() {
        let taps = w.row(lane.c);
        for t in 0..t_len {
            let mut acc = 0.0f64;
            for (i, &wi) in taps.iter().enumerate() {
                let lag = (k - 1 - i) * d;
                if lag > t {
                    continue;
                }
                acc += wi * src[lane.base + (t - lag) * ts].to_f64();
            }
            if let Some(b) = bias {
                acc += b[lane.c];
            }
            out[lane.base + t * ts] = F::from_f64(acc);
        }
    }
    let taps = in_range_taps(t_len, k, d) * x.dims().lanes() as u64;
    counters.muls += taps;
    counters.adds += taps + if bias.is_some() { (t_len * x.dims().lanes()) as u64 } else { 0 };
    x.with_data(out)
}

/// Shift forward pass on a float carrier: each tap edits the exponent of the
/// activation instead of multiplying.
pub fn conv_forward_shift<F: Real>(
    x: &TemporalTensor<F>,
    q: &ShiftWeights,
    bias: Option<&[f64]>,
    d: usize,
    counters: &mut OpCounters,
) -> Result<TemporalTensor<F>> {
    let k = q.cols();
    check_forward(x, q.rows(), k, bias.map(<[f64]>::len), d)?;
    let t_len = x.dims().t;
    let ts = x.time_stride();
    let src = x.data();
    let mut out = vec![F::default(); x.len()];
    for lane in x.lanes() {
        for t in 0..t_len {
            let mut acc = 0.0f64;
            for i in 0..k {
                let lag = (k - 1 - i) * d;
                if lag > t {
                    continue;
                }
                let xv = src[lane.base + (t - lag) * ts].to_f64();
                acc += xv.shift_mul(q.sign(lane.c, i), q.exponent(lane.c, i));
            }
            if let Some(b) = bias {
                acc += b[lane.c];
            }
            out[lane.base + t * ts] = F::from_f64(acc);
        }
    }
    let taps = in_range_taps(t_len, k, d) * x.dims().lanes() as u64;
    counters.shifts += taps;
    counters.adds += taps + if bias.is_some() { (t_len * x.dims().lanes()) as u64 } else { 0 };
    x.with_data(out)
}

/// Shift forward pass on fixed-point `i32` activations. Negative exponents
/// shift right arithmetically (truncating toward −∞). Accumulates in `i64`,
/// then saturates; each clamp is counted in `counters.saturations`.
pub fn conv_forward_shift_i32(
    x: &TemporalTensor<i32>,
    q: &ShiftWeights,
    bias: Option<&[i32]>,
    d: usize,
    counters: &mut OpCounters,
) -> Result<TemporalTensor<i32>> {
    let k = q.cols();
    check_forward(x, q.rows(), k, bias.map(<[i32]>::len), d)?;
    let t_len = x.dims().t;
    let ts = x.time_stride();
    let src = x.data();
    let mut out = vec![0i32; x.len()];
    let mut saturations = 0u64;
    for lane in x.lanes() {
        for t in 0..t_len {
            let mut acc = 0i64;
            for i in 0..k {
                let lag = (k - 1 - i) * d;
                if lag > t {
                    continue;
                }
                let (v, sat) = shift_mul_int(src[lane.base + (t - lag) * ts], q.sign(lane.c, i), q.exponent(lane.c, i));
                saturations += u64::from(sat);
                acc += i64::from(v);
            }
            if let Some(b) = bias {
                acc += i64::from(b[lane.c]);
            }
            let (v, sat) = saturate_i32(acc);
            saturations += u64::from(sat);
            out[lane.base + t * ts] = v;
        }
    }
    let taps = in_range_taps(t_len, k, d) * x.dims().lanes() as u64;
    counters.shifts += taps;
    counters.adds += taps + if bias.is_some() { (t_len * x.dims().lanes()) as u64 } else { 0 };
    counters.saturations += saturations;
    x.with_data(out)
}

/// Forward pass tiled over blocks of `block` lanes and `block` time-steps.
/// With `threads > 1` lane blocks are distributed over scoped threads; each
/// output is still produced by the same tap order, so results do not depend
/// on the thread count.
pub fn conv_forward_blocked<F: Real>(
    x: &TemporalTensor<F>,
    w: &Matrix,
    bias: Option<&[f64]>,
    d: usize,
    block: usize,
    threads: usize,
    counters: &mut OpCounters,
) -> Result<TemporalTensor<F>> {
    let k = w.cols();
    check_forward(x, w.rows(), k, bias.map(<[f64]>::len), d)?;
    if block == 0 {
        return Err(Error::InvalidConfig("block size must be positive".into()));
    }
    let t_len = x.dims().t;
    let ts = x.time_stride();
    let src = x.data();
    let lanes: Vec<_> = x.lanes().collect();
    let run_chunk = |chunk: &[crate::tensor::Lane], dst: &mut [f64]| {
        // dst is laid out [lane_in_chunk][t]
        for lane_block in (0..chunk.len()).step_by(block) {
            let lane_end = (lane_block + block).min(chunk.len());
            for t0 in (0..t_len).step_by(block) {
                let t_end = (t0 + block).min(t_len);
                for t in t0..t_end {
                    for (li, lane) in chunk.iter().enumerate().take(lane_end).skip(lane_block) {
                        let taps = w.row(lane.c);
                        let mut acc = 0.0f64;
                        for (i, &wi) in taps.iter().enumerate() {
                            let lag = (k - 1 - i) * d;
                            if lag > t {
                                continue;
                            }
                            acc += wi * src[lane.base + (t - lag) * ts].to_f64();
                        }
                        if let Some(b) = bias {
                            acc += b[lane.c];
                        }
                        dst[li * t_len + t] = acc;
                    }
                }
            }
        }
    };
    let mut out = vec![F::default(); x.len()];
    let threads = threads.max(1).min(lanes.len());
    if threads == 1 {
        let mut dst = vec![0.0; lanes.len() * t_len];
        run_chunk(&lanes, &mut dst);
        scatter(&lanes, &dst, t_len, ts, &mut out);
    } else {
        let per = lanes.len().div_ceil(threads);
        let results: Vec<Vec<f64>> = std::thread::scope(|scope| {
            let handles: Vec<_> = lanes
                .chunks(per)
                .map(|chunk| {
                    let run_chunk = &run_chunk;
                    scope.spawn(move || {
                        let mut dst = vec![0.0; chunk.len() * t_len];
                        run_chunk(chunk, &mut dst);
                        dst
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("kernel thread panicked")).collect()
        });
        for (chunk, dst) in lanes.chunks(per).zip(&results) {
            scatter(chunk, dst, t_len, ts, &mut out);
        }
    }
    let taps = in_range_taps(t_len, k, d) * x.dims().lanes() as u64;
    counters.muls += taps;
    counters.adds += taps + if bias.is_some() { (t_len * x.dims().lanes()) as u64 } else { 0 };
    x.with_data(out)
}

fn scatter<F: Real>(lanes: &[crate::tensor::Lane], dst: &[f64], t_len: usize, ts: usize, out: &mut [F]) {
    for (li, lane) in lanes.iter().enumerate() {
        for t in 0..t_len {
            out[lane.base + t * ts] = F::from_f64(dst[li * t_len + t]);
        }
    }
}

/// Builds the per-channel `T × T` operator of the matrix-multiplication
/// engine, flattened as `[c][row][col]`.
///
/// Time-first: `A[c][i][j] = W[c][k−1−(i−j)/d]` when `i − d(k−1) ≤ j ≤ i` and
/// `(i−j) mod d = 0`, else 0, so that `H[c] = A[c]·X[c]`. Time-last stores
/// the transpose, so that `H[c] = X[c]·A[c]`.
pub fn build_operator(w: &Matrix, t_len: usize, d: usize, layout: Layout) -> Vec<f64> {
    let k = w.cols();
    let mut a = vec![0.0; w.rows() * t_len * t_len];
    for c in 0..w.rows() {
        let plane = &mut a[c * t_len * t_len..(c + 1) * t_len * t_len];
        for i in 0..t_len {
            for j in 0..=i {
                let gap = i - j;
                if gap % d != 0 || gap / d > k - 1 {
                    continue;
                }
                let v = w.get(c, k - 1 - gap / d);
                match layout {
                    Layout::TimeFirst => plane[i * t_len + j] = v,
                    Layout::TimeLast => plane[j * t_len + i] = v,
                }
            }
        }
    }
    a
}

#[derive(Debug)]
struct CachedOperator {
    weights: Vec<f64>,
    operator: Vec<f64>,
}

/// Operators of the matrix-multiplication engine, built when a sequence
/// length is first seen and keyed by `(T, k, d, layout)`. An entry is rebuilt
/// when the weights it was built from change.
#[derive(Debug, Default)]
pub struct OperatorCache {
    entries: HashMap<(usize, usize, usize, Layout), CachedOperator>,
    builds: u64,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of operator constructions so far.
    pub fn builds(&self) -> u64 {
        self.builds
    }

    fn get(&mut self, w: &Matrix, t_len: usize, d: usize, layout: Layout) -> &[f64] {
        let key = (t_len, w.cols(), d, layout);
        let stale = self.entries.get(&key).is_none_or(|e| e.weights != w.data());
        if stale {
            self.builds += 1;
            self.entries.insert(
                key,
                CachedOperator { weights: w.data().to_vec(), operator: build_operator(w, t_len, d, layout) },
            );
        }
        &self.entries[&key].operator
    }
}

/// `y = A·x` (time-first orientation) or `y = x·A` (time-last), where
/// `plane` is one channel's operator and `x`, `y` are strided lanes.
fn apply_operator(plane: &[f64], layout: Layout, transpose: bool, x: impl Fn(usize) -> f64, t_len: usize) -> Vec<f64> {
    // `transpose` applies Aᵀ instead of A, used by the input gradient.
    let row_major = (layout == Layout::TimeFirst) != transpose;
    let mut y = vec![0.0; t_len];
    if row_major {
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &plane[i * t_len..(i + 1) * t_len];
            let mut acc = 0.0;
            for (j, &a) in row.iter().enumerate() {
                acc += a * x(j);
            }
            *yi = acc;
        }
    } else {
        for j in 0..t_len {
            let xj = x(j);
            let row = &plane[j * t_len..(j + 1) * t_len];
            for (yi, &a) in y.iter_mut().zip(row) {
                *yi += xj * a;
            }
        }
    }
    y
}

/// Matrix-multiplication forward pass.
pub fn conv_forward_matmul<F: Real>(
    x: &TemporalTensor<F>,
    w: &Matrix,
    bias: Option<&[f64]>,
    d: usize,
    cache: &mut OperatorCache,
    counters: &mut OpCounters,
) -> Result<TemporalTensor<F>> {
    check_forward(x, w.rows(), w.cols(), bias.map(<[f64]>::len), d)?;
    let t_len = x.dims().t;
    let ts = x.time_stride();
    let layout = x.layout();
    let src = x.data();
    let operator = cache.get(w, t_len, d, layout);
    let mut out = vec![F::default(); x.len()];
    for lane in x.lanes() {
        let plane = &operator[lane.c * t_len * t_len..(lane.c + 1) * t_len * t_len];
        let y = apply_operator(plane, layout, false, |j| src[lane.base + j * ts].to_f64(), t_len);
        for (t, v) in y.into_iter().enumerate() {
            let v = if let Some(b) = bias { v + b[lane.c] } else { v };
            out[lane.base + t * ts] = F::from_f64(v);
        }
    }
    let dense = (t_len * t_len * x.dims().lanes()) as u64;
    counters.muls += dense;
    counters.adds += dense + if bias.is_some() { (t_len * x.dims().lanes()) as u64 } else { 0 };
    x.with_data(out)
}

/// `∂L/∂X`: correlation of the right-padded upstream gradient with the
/// flipped kernel, taps `d` apart. This is the transpose of the forward map.
pub fn conv_backward_input<F: Real>(dh: &TemporalTensor<F>, w: &Matrix, d: usize) -> Result<TemporalTensor<F>> {
    let k = w.cols();
    check_forward(dh, w.rows(), k, None, d)?;
    let t_len = dh.dims().t;
    let ts = dh.time_stride();
    let src = dh.data();
    let mut out = vec![F::default(); dh.len()];
    for lane in dh.lanes() {
        let taps = w.row(lane.c);
        for t in 0..t_len {
            let mut acc = 0.0f64;
            for (i, &wi) in taps.iter().enumerate() {
                let ahead = t + (k - 1 - i) * d;
                if ahead >= t_len {
                    continue;
                }
                acc += wi * src[lane.base + ahead * ts].to_f64();
            }
            out[lane.base + t * ts] = F::from_f64(acc);
        }
    }
    dh.with_data(out)
}

/// Tiled variant of [`conv_backward_input`].
pub fn conv_backward_input_blocked<F: Real>(
    dh: &TemporalTensor<F>,
    w: &Matrix,
    d: usize,
    block: usize,
) -> Result<TemporalTensor<F>> {
    let k = w.cols();
    check_forward(dh, w.rows(), k, None, d)?;
    if block == 0 {
        return Err(Error::InvalidConfig("block size must be positive".into()));
    }
    let t_len = dh.dims().t;
    let ts = dh.time_stride();
    let src = dh.data();
    let lanes: Vec<_> = dh.lanes().collect();
    let mut out = vec![F::default(); dh.len()];
    for lane_block in lanes.chunks(block) {
        for t0 in (0..t_len).step_by(block) {
            for t in t0..(t0 + block).min(t_len) {
                for lane in lane_block {
                    let taps = w.row(lane.c);
                    let mut acc = 0.0f64;
                    for (i, &wi) in taps.iter().enumerate() {
                        let ahead = t + (k - 1 - i) * d;
                        if ahead < t_len {
                            acc += wi * src[lane.base + ahead * ts].to_f64();
                        }
                    }
                    out[lane.base + t * ts] = F::from_f64(acc);
                }
            }
        }
    }
    dh.with_data(out)
}

/// Input gradient through the transposed operator of the matmul engine.
pub fn conv_backward_input_matmul<F: Real>(
    dh: &TemporalTensor<F>,
    w: &Matrix,
    d: usize,
    cache: &mut OperatorCache,
) -> Result<TemporalTensor<F>> {
    check_forward(dh, w.rows(), w.cols(), None, d)?;
    let t_len = dh.dims().t;
    let ts = dh.time_stride();
    let layout = dh.layout();
    let src = dh.data();
    let operator = cache.get(w, t_len, d, layout);
    let mut out = vec![F::default(); dh.len()];
    for lane in dh.lanes() {
        let plane = &operator[lane.c * t_len * t_len..(lane.c + 1) * t_len * t_len];
        let y = apply_operator(plane, layout, true, |j| src[lane.base + j * ts].to_f64(), t_len);
        for (t, v) in y.into_iter().enumerate() {
            out[lane.base + t * ts] = F::from_f64(v);
        }
    }
    dh.with_data(out)
}

/// `∂L/∂W[c][i] = Σ X[t − (k−1−i)·d][c] · δH[t][c]` summed over time, batch
/// and spatial sites.
pub fn conv_backward_weight<F: Real>(
    x: &TemporalTensor<F>,
    dh: &TemporalTensor<F>,
    k: usize,
    d: usize,
) -> Result<Matrix> {
    check_same_shape(x, dh)?;
    if k == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!("order k={k} and dilation d={d} must be positive")));
    }
    let t_len = x.dims().t;
    let ts = x.time_stride();
    let (xs, gs) = (x.data(), dh.data());
    let mut grad = Matrix::zeros(x.dims().c, k);
    for lane in x.lanes() {
        for i in 0..k {
            let lag = (k - 1 - i) * d;
            let mut acc = 0.0f64;
            for t in lag..t_len {
                acc += xs[lane.base + (t - lag) * ts].to_f64() * gs[lane.base + t * ts].to_f64();
            }
            let g = grad.get(lane.c, i) + acc;
            grad.set(lane.c, i, g);
        }
    }
    Ok(grad)
}

/// `∂L/∂b[c]`: per-channel sum of the upstream gradient.
pub fn conv_backward_bias<F: Real>(dh: &TemporalTensor<F>) -> Vec<f64> {
    let t_len = dh.dims().t;
    let ts = dh.time_stride();
    let src = dh.data();
    let mut grad = vec![0.0; dh.dims().c];
    for lane in dh.lanes() {
        for t in 0..t_len {
            grad[lane.c] += src[lane.base + t * ts].to_f64();
        }
    }
    grad
}

/// A configured engine: kind, block size, thread count and operator cache.
#[derive(Debug)]
pub struct ConvEngine {
    kind: EngineKind,
    block: usize,
    threads: usize,
    cache: OperatorCache,
}

impl ConvEngine {
    pub fn new(kind: EngineKind) -> Self {
        ConvEngine { kind, block: 16, threads: 1, cache: OperatorCache::new() }
    }

    pub fn with_block(mut self, block: usize) -> Self {
        self.block = block.max(1);
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn kind(&self) -> EngineKind {
        self.kind
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn cache(&self) -> &OperatorCache {
        &self.cache
    }

    pub fn forward<F: Real>(
        &mut self,
        x: &TemporalTensor<F>,
        kernel: Kernel<'_>,
        bias: Option<&[f64]>,
        d: usize,
        counters: &mut OpCounters,
    ) -> Result<TemporalTensor<F>> {
        let dense;
        let w = match (self.kind, kernel) {
            (EngineKind::ShiftInt, Kernel::Shift(q)) => return conv_forward_shift(x, q, bias, d, counters),
            (EngineKind::ShiftInt, Kernel::Float(_)) => {
                return Err(Error::InvalidConfig("the shift engine needs power-of-two weights".into()))
            }
            (_, Kernel::Float(w)) => w,
            (_, Kernel::Shift(q)) => {
                dense = dequantize(q);
                &dense
            }
        };
        match self.kind {
            EngineKind::DirectLoop => conv_forward_direct(x, w, bias, d, counters),
            EngineKind::MatMul => conv_forward_matmul(x, w, bias, d, &mut self.cache, counters),
            EngineKind::BlockedDirect => conv_forward_blocked(x, w, bias, d, self.block, self.threads, counters),
            EngineKind::ShiftInt => unreachable!(),
        }
    }

    /// Input gradient; `w` holds the weights the forward pass used.
    pub fn backward_input<F: Real>(&mut self, dh: &TemporalTensor<F>, w: &Matrix, d: usize) -> Result<TemporalTensor<F>> {
        match self.kind {
            EngineKind::DirectLoop | EngineKind::ShiftInt => conv_backward_input(dh, w, d),
            EngineKind::MatMul => conv_backward_input_matmul(dh, w, d, &mut self.cache),
            EngineKind::BlockedDirect => conv_backward_input_blocked(dh, w, d, self.block),
        }
    }

    pub fn backward_weight<F: Real>(
        &self,
        x: &TemporalTensor<F>,
        dh: &TemporalTensor<F>,
        k: usize,
        d: usize,
    ) -> Result<Matrix> {
        conv_backward_weight(x, dh, k, d)
    }
}

//! Dense temporal tensors with an explicit memory layout.
//!
//! A [`TemporalTensor`] always carries the logical axes `T` (time), `N`
//! (batch), `C` (channel) and up to two extra spatial axes. The [`Layout`]
//! decides the physical order: time-first stores `(T, N, C, ...)`,
//! time-last stores `(N, C, ..., T)`.
//!
//! Switching between the two layouts touches non-adjacent axes and always
//! materializes a new buffer. Merging the adjacent `T` and `N` axes of a
//! time-first tensor only changes the view. Every physical copy bumps a
//! thread-local counter so tests can assert which reshapes are free.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar types a tensor may hold.
pub trait Element: Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {}

impl Element for f64 {}
impl Element for f32 {}
impl Element for i32 {}

/// Maximum number of extra spatial axes (rank 5 overall).
pub const MAX_SPATIAL_AXES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Physical order `(T, N, C, ...)`.
    TimeFirst,
    /// Physical order `(N, C, ..., T)`.
    TimeLast,
}

impl Layout {
    pub const ALL: [Layout; 2] = [Layout::TimeFirst, Layout::TimeLast];

    pub fn name(self) -> &'static str {
        match self {
            Layout::TimeFirst => "time-first",
            Layout::TimeLast => "time-last",
        }
    }

    pub fn parse(s: &str) -> Option<Layout> {
        match s {
            "time-first" | "tf" | "TimeFirst" => Some(Layout::TimeFirst),
            "time-last" | "tl" | "TimeLast" => Some(Layout::TimeLast),
            _ => None,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Logical extents of a temporal tensor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub t: usize,
    pub n: usize,
    pub c: usize,
    pub spatial: Vec<usize>,
}

impl Dims {
    pub fn new(t: usize, n: usize, c: usize) -> Self {
        Dims { t, n, c, spatial: Vec::new() }
    }

    pub fn with_spatial(t: usize, n: usize, c: usize, spatial: &[usize]) -> Self {
        Dims { t, n, c, spatial: spatial.to_vec() }
    }

    /// Product of the spatial extents (1 when there are none).
    pub fn spatial_size(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn numel(&self) -> usize {
        self.t * self.n * self.c * self.spatial_size()
    }

    /// Number of independent time series (one per `(n, c, spatial)` site).
    pub fn lanes(&self) -> usize {
        self.n * self.c * self.spatial_size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.n == 0 || self.c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "T, N and C must be at least 1, got T={} N={} C={}",
                self.t, self.n, self.c
            )));
        }
        if self.spatial.len() > MAX_SPATIAL_AXES || self.spatial.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "at most {MAX_SPATIAL_AXES} non-empty spatial axes allowed, got {:?}",
                self.spatial
            )));
        }
        Ok(())
    }
}

/// One time series inside a tensor: its logical coordinates and the
/// physical offset of its `t = 0` element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lane {
    pub n: usize,
    pub c: usize,
    pub s: usize,
    pub base: usize,
}

thread_local! {
    static COPIES: Cell<u64> = const { Cell::new(0) };
}

/// Number of physical buffer copies made by layout conversions on this thread.
pub fn copy_count() -> u64 {
    COPIES.with(|c| c.get())
}

fn record_copy() {
    COPIES.with(|c| c.set(c.get() + 1));
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalTensor<E: Element> {
    data: Arc<Vec<E>>,
    dims: Dims,
    layout: Layout,
    strides: Vec<usize>,
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn physical_shape(dims: &Dims, layout: Layout) -> Vec<usize> {
    let mut shape = Vec::with_capacity(3 + dims.spatial.len());
    match layout {
        Layout::TimeFirst => {
            shape.extend([dims.t, dims.n, dims.c]);
            shape.extend(&dims.spatial);
        }
        Layout::TimeLast => {
            shape.extend([dims.n, dims.c]);
            shape.extend(&dims.spatial);
            shape.push(dims.t);
        }
    }
    shape
}

impl<E: Element> TemporalTensor<E> {
    pub fn from_vec(dims: Dims, layout: Layout, data: Vec<E>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.numel() {
            return Err(Error::ShapeMismatch(format!(
                "buffer holds {} elements but dims {:?} need {}",
                data.len(),
                dims,
                dims.numel()
            )));
        }
        let strides = contiguous_strides(&physical_shape(&dims, layout));
        Ok(TemporalTensor { data: Arc::new(data), dims, layout, strides })
    }

    pub fn zeros(dims: Dims, layout: Layout) -> Result<Self> {
        let n = dims.numel();
        Self::from_vec(dims, layout, vec![E::default(); n])
    }

    /// Builds a tensor from a function of logical coordinates `(t, n, c, s)`,
    /// where `s` is the flattened spatial index.
    pub fn from_fn(
        dims: Dims,
        layout: Layout,
        mut f: impl FnMut(usize, usize, usize, usize) -> E,
    ) -> Result<Self> {
        dims.validate()?;
        let mut data = vec![E::default(); dims.numel()];
        let probe: TemporalTensor<E> = TemporalTensor {
            data: Arc::new(Vec::new()),
            strides: contiguous_strides(&physical_shape(&dims, layout)),
            dims: dims.clone(),
            layout,
        };
        for t in 0..dims.t {
            for n in 0..dims.n {
                for c in 0..dims.c {
                    for s in 0..dims.spatial_size() {
                        data[probe.offset(t, n, c, s)] = f(t, n, c, s);
                    }
                }
            }
        }
        Self::from_vec(dims, layout, data)
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Extents in physical order.
    pub fn shape(&self) -> Vec<usize> {
        physical_shape(&self.dims, self.layout)
    }

    /// Element strides in physical order.
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when both tensors view the same physical buffer.
    pub fn shares_buffer(&self, other: &TemporalTensor<E>) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }

    pub fn into_vec(self) -> Vec<E> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Distance in elements between consecutive time-steps of one lane.
    pub fn time_stride(&self) -> usize {
        match self.layout {
            Layout::TimeFirst => self.strides[0],
            Layout::TimeLast => 1,
        }
    }

    /// Physical offset of the logical element `(t, n, c, s)`.
    #[inline]
    pub fn offset(&self, t: usize, n: usize, c: usize, s: usize) -> usize {
        match self.layout {
            Layout::TimeFirst => t * self.strides[0] + n * self.strides[1] + c * self.strides[2] + s,
            Layout::TimeLast => n * self.strides[0] + c * self.strides[1] + s * self.dims.t + t,
        }
    }

    #[inline]
    pub fn get(&self, t: usize, n: usize, c: usize, s: usize) -> E {
        self.data[self.offset(t, n, c, s)]
    }

    /// All lanes, ordered by `(n, c, s)`.
    pub fn lanes(&self) -> impl Iterator<Item = Lane> + '_ {
        let ss = self.dims.spatial_size();
        (0..self.dims.n).flat_map(move |n| {
            (0..self.dims.c).flat_map(move |c| {
                (0..ss).map(move |s| Lane { n, c, s, base: self.offset(0, n, c, s) })
            })
        })
    }

    /// A zero tensor with the same dims and layout.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims.clone(), self.layout).expect("dims already validated")
    }

    /// Same dims and layout, new data (must match in length).
    pub fn with_data<F: Element>(&self, data: Vec<F>) -> Result<TemporalTensor<F>> {
        TemporalTensor::from_vec(self.dims.clone(), self.layout, data)
    }

    pub fn map<F: Element>(&self, f: impl FnMut(E) -> F) -> TemporalTensor<F> {
        TemporalTensor {
            data: Arc::new(self.data.iter().copied().map(f).collect()),
            dims: self.dims.clone(),
            layout: self.layout,
            strides: self.strides.clone(),
        }
    }

    /// Logical content in time-first order, independent of layout.
    pub fn to_time_first_vec(&self) -> Vec<E> {
        if self.layout == Layout::TimeFirst {
            return self.data.to_vec();
        }
        let mut out = Vec::with_capacity(self.len());
        for t in 0..self.dims.t {
            for n in 0..self.dims.n {
                for c in 0..self.dims.c {
                    for s in 0..self.dims.spatial_size() {
                        out.push(self.get(t, n, c, s));
                    }
                }
            }
        }
        out
    }
}

/// Returns `x` in the `target` layout and whether a physical copy was made.
///
/// Converting between time-first and time-last always copies; converting to
/// the current layout returns a view of the same buffer.
pub fn convert_layout<E: Element>(
    x: &TemporalTensor<E>,
    target: Layout,
) -> (TemporalTensor<E>, bool) {
    if x.layout == target {
        return (x.clone(), false);
    }
    let out = TemporalTensor::from_fn(x.dims.clone(), target, |t, n, c, s| x.get(t, n, c, s))
        .expect("dims already validated");
    record_copy();
    (out, true)
}

/// A strided view without temporal semantics, produced by axis merging.
#[derive(Clone, Debug)]
pub struct TensorView<E: Element> {
    data: Arc<Vec<E>>,
    shape: Vec<usize>,
    strides: Vec<usize>,
}

impl<E: Element> TensorView<E> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn shares_buffer(&self, other: &TemporalTensor<E>) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }

    /// Row `r` of the leading axis as a contiguous slice.
    pub fn row(&self, r: usize) -> &[E] {
        let width = self.strides[0];
        &self.data[r * width..(r + 1) * width]
    }
}

/// Fuses the adjacent `T` and `N` axes of a time-first tensor into one
/// leading axis of extent `T·N`. Never copies.
pub fn merge_time_batch<E: Element>(x: &TemporalTensor<E>) -> Result<TensorView<E>> {
    if x.layout != Layout::TimeFirst {
        return Err(Error::LayoutUnsupported(
            "time and batch axes are not adjacent in the time-last layout",
        ));
    }
    let mut shape = vec![x.dims.t * x.dims.n, x.dims.c];
    shape.extend(&x.dims.spatial);
    let mut strides = vec![x.strides[1]];
    strides.extend_from_slice(&x.strides[2..]);
    Ok(TensorView { data: Arc::clone(&x.data), shape, strides })
}

/// Dense row-major `f64` matrix, used for weights (`C × k`) and dense operators.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().copied().map(f).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_first_to_time_last_transposes() {
        // a0 b0 c0 | a1 b1 c1
        let x = TemporalTensor::from_vec(
            Dims::new(2, 1, 3),
            Layout::TimeFirst,
            vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0],
        )
        .unwrap();
        let before = copy_count();
        let (y, copied) = convert_layout(&x, Layout::TimeLast);
        assert!(copied);
        assert_eq!(copy_count(), before + 1);
        assert_eq!(y.shape(), vec![1, 3, 2]);
        assert_eq!(y.data(), &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
    }

    #[test]
    fn identity_conversion_does_not_copy() {
        let x = TemporalTensor::from_vec(Dims::new(2, 1, 2), Layout::TimeFirst, vec![1, 2, 3, 4])
            .unwrap();
        let before = copy_count();
        let (y, copied) = convert_layout(&x, Layout::TimeFirst);
        assert!(!copied);
        assert!(y.shares_buffer(&x));
        assert_eq!(copy_count(), before);
    }

    #[test]
    fn round_trip_restores_elements() {
        let x = TemporalTensor::from_fn(Dims::new(3, 2, 2), Layout::TimeFirst, |t, n, c, _| {
            (t * 100 + n * 10 + c) as f64
        })
        .unwrap();
        let (tl, _) = convert_layout(&x, Layout::TimeLast);
        let (back, _) = convert_layout(&tl, Layout::TimeFirst);
        for t in 0..3 {
            for n in 0..2 {
                for c in 0..2 {
                    assert_eq!(back.get(t, n, c, 0), x.get(t, n, c, 0));
                    assert_eq!(tl.get(t, n, c, 0), x.get(t, n, c, 0));
                }
            }
        }
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn merge_time_batch_is_a_view() {
        let x = TemporalTensor::<f32>::zeros(Dims::new(4, 8, 16), Layout::TimeFirst).unwrap();
        let before = copy_count();
        let v = merge_time_batch(&x).unwrap();
        assert_eq!(v.shape(), &[32, 16]);
        assert!(v.shares_buffer(&x));
        assert_eq!(copy_count(), before);

        let y = TemporalTensor::<f64>::zeros(Dims::new(1, 1, 5), Layout::TimeFirst).unwrap();
        assert_eq!(merge_time_batch(&y).unwrap().shape(), &[1, 5]);
    }

    #[test]
    fn merge_rejects_time_last() {
        let x = TemporalTensor::<f64>::zeros(Dims::new(2, 2, 2), Layout::TimeLast).unwrap();
        let err = merge_time_batch(&x).unwrap_err();
        assert!(err.to_string().starts_with("layout-unsupported"));
    }

    #[test]
    fn spatial_axes_and_strides() {
        let dims = Dims::with_spatial(3, 2, 4, &[5, 6]);
        let tf = TemporalTensor::<f64>::zeros(dims.clone(), Layout::TimeFirst).unwrap();
        assert_eq!(tf.shape(), vec![3, 2, 4, 5, 6]);
        assert_eq!(tf.strides(), &[240, 120, 30, 6, 1]);
        assert_eq!(tf.time_stride(), 240);
        let tl = TemporalTensor::<f64>::zeros(dims, Layout::TimeLast).unwrap();
        assert_eq!(tl.shape(), vec![2, 4, 5, 6, 3]);
        assert_eq!(tl.time_stride(), 1);
        assert_eq!(tl.lanes().count(), 2 * 4 * 30);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(TemporalTensor::<f64>::zeros(Dims::new(0, 1, 1), Layout::TimeFirst).is_err());
        assert!(TemporalTensor::<f64>::from_vec(Dims::new(2, 1, 1), Layout::TimeFirst, vec![0.0])
            .is_err());
        assert!(TemporalTensor::<f64>::zeros(
            Dims::with_spatial(1, 1, 1, &[1, 1, 1]),
            Layout::TimeFirst
        )
        .is_err());
    }
}

//! Dense multivector tensors with reverse-mode differentiation.
//!
//! An [`MvTensor`] has logical axes `(outer, channel, spatial.., blade)` and
//! is stored channel-planar: `[outer][channel][blade][grid]`, so each
//! (channel, blade) pair owns a contiguous spatial plane. Activations use
//! `outer` for the batch; convolution weights use it for output channels and
//! the grid for kernel taps.

mod adam;
mod conv;
mod tape;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

use crate::algebra::{Algebra, Blade};
use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use conv::{conv_backward, conv_forward, ConvGrads, Padding};
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};

/// Floating-point element type of tensors (f32 for training, f64 for checks).
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides and dimensions must keep every access inside the slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major matrix view for [`gemm`]; `transposed` reads it as its transpose.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c`, all row-major; `c` is `m x n`.
pub(crate) fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.shape();
    let (kb, n) = b.shape();
    assert_eq!(k, kb, "gemm inner dimensions");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert_eq!(c.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes and strides were checked against the slice lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense tensor of multivector coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MvTensor<T> {
    algebra: Algebra,
    outer: usize,
    channels: usize,
    spatial: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> MvTensor<T> {
    pub fn zeros(algebra: &Algebra, outer: usize, channels: usize, spatial: &[usize]) -> Self {
        let len = outer * channels * algebra.num_blades() * spatial.iter().product::<usize>();
        Self {
            algebra: algebra.clone(),
            outer,
            channels,
            spatial: spatial.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    /// Wrap planar data laid out `[outer][channel][blade][grid]`.
    pub fn from_planar(
        algebra: &Algebra,
        outer: usize,
        channels: usize,
        spatial: &[usize],
        data: Vec<T>,
    ) -> Result<Self> {
        let expected = outer * channels * algebra.num_blades() * spatial.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::usage(format!(
                "tensor data has {} values, shape needs {expected}",
                data.len()
            )));
        }
        Ok(Self {
            algebra: algebra.clone(),
            outer,
            channels,
            spatial: spatial.to_vec(),
            data,
        })
    }

    /// Uniform in `[-scale, scale]` for every coefficient.
    pub fn random_uniform<R: Rng>(
        algebra: &Algebra,
        outer: usize,
        channels: usize,
        spatial: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(algebra, outer, channels, spatial);
        if scale > 0.0 {
            for v in &mut t.data {
                *v = T::from_f64(rng.gen_range(-scale..=scale));
            }
        }
        t
    }

    pub fn algebra(&self) -> &Algebra {
        &self.algebra
    }

    pub fn outer(&self) -> usize {
        self.outer
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> &[usize] {
        &self.spatial
    }

    pub fn blades(&self) -> usize {
        self.algebra.num_blades()
    }

    pub fn grid_len(&self) -> usize {
        self.spatial.iter().product()
    }

    /// Logical shape `(outer, channels, spatial.., blades)`.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.outer, self.channels];
        s.extend_from_slice(&self.spatial);
        s.push(self.blades());
        s
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.algebra == other.algebra
            && self.outer == other.outer
            && self.channels == other.channels
            && self.spatial == other.spatial
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Contiguous spatial plane of one (outer, channel, blade) triple.
    pub fn plane(&self, outer: usize, channel: usize, blade: Blade) -> &[T] {
        let g = self.grid_len();
        let start = ((outer * self.channels + channel) * self.blades() + blade.index()) * g;
        &self.data[start..start + g]
    }

    pub fn plane_mut(&mut self, outer: usize, channel: usize, blade: Blade) -> &mut [T] {
        let g = self.grid_len();
        let start = ((outer * self.channels + channel) * self.blades() + blade.index()) * g;
        &mut self.data[start..start + g]
    }

    /// Flat grid index for a spatial multi-index (C order).
    pub fn grid_index(&self, pos: &[usize]) -> usize {
        debug_assert_eq!(pos.len(), self.spatial.len());
        pos.iter().zip(&self.spatial).fold(0, |acc, (&p, &d)| acc * d + p)
    }

    pub fn get(&self, outer: usize, channel: usize, pos: &[usize], blade: Blade) -> T {
        self.plane(outer, channel, blade)[self.grid_index(pos)]
    }

    pub fn set(&mut self, outer: usize, channel: usize, pos: &[usize], blade: Blade, value: T) {
        let idx = self.grid_index(pos);
        self.plane_mut(outer, channel, blade)[idx] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::usage(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::usage("shape mismatch in accumulate"));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> MvTensor<U> {
        MvTensor {
            algebra: self.algebra.clone(),
            outer: self.outer,
            channels: self.channels,
            spatial: self.spatial.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Copy one outer slice (e.g. a batch item) into a new tensor with outer = 1.
    pub fn outer_slice(&self, index: usize) -> Self {
        let per = self.channels * self.blades() * self.grid_len();
        Self {
            algebra: self.algebra.clone(),
            outer: 1,
            channels: self.channels,
            spatial: self.spatial.clone(),
            data: self.data[index * per..(index + 1) * per].to_vec(),
        }
    }
}

/// Componentwise ReLU on every blade coefficient.
pub fn ga_relu<T: Real>(x: &MvTensor<T>) -> MvTensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn residual_add<T: Real>(x: &MvTensor<T>, y: &MvTensor<T>) -> Result<MvTensor<T>> {
    x.zip_map(y, |a, b| a + b)
}

/// Sum of squared differences over the masked blades, averaged over outer
/// index, channels and grid cells.
pub fn mse_loss<T: Real>(pred: &MvTensor<T>, target: &MvTensor<T>, mask: &[Blade]) -> Result<T> {
    let (sum, denom) = masked_sq_sum(pred, target, mask)?;
    Ok(sum / denom)
}

pub(crate) fn masked_sq_sum<T: Real>(
    pred: &MvTensor<T>,
    target: &MvTensor<T>,
    mask: &[Blade],
) -> Result<(T, T)> {
    if mask.is_empty() {
        return Err(Error::usage("empty blade mask in loss"));
    }
    if !pred.same_shape(target) {
        return Err(Error::usage(format!(
            "loss shape mismatch {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if mask.iter().any(|b| b.index() >= pred.blades()) {
        return Err(Error::usage("mask blade outside algebra"));
    }
    let mut sum = T::zero();
    for o in 0..pred.outer() {
        for c in 0..pred.channels() {
            for &b in mask {
                for (&p, &t) in pred.plane(o, c, b).iter().zip(target.plane(o, c, b)) {
                    let d = p - t;
                    sum += d * d;
                }
            }
        }
    }
    let denom = T::from_f64((pred.outer() * pred.channels() * pred.grid_len()) as f64);
    Ok((sum, denom))
}

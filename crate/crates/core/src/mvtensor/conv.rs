//! Clifford convolution.
//!
//! `out[b, co, p] = bias[co] + sum_ci sum_tap gp(w[co, ci, tap], x[b, ci, p + tap])`
//!
//! The kernel multivector multiplies from the left. Because the geometric
//! product is bilinear with a signed permutation structure, the layer is an
//! ordinary real convolution whose `(Cout*blades) x (Cin*blades*taps)` weight
//! matrix is assembled from the Cayley table: entry `((co,k),(ci,j,tap))`
//! holds `sign(k^j, j) * w[co, ci, k^j, tap]`. Forward and both adjoints are
//! then an im2col plus one GEMM each.

use serde::{Deserialize, Serialize};

use super::{gemm, MatRef, MvTensor, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-pad so the output grid equals the input grid.
    #[default]
    Same,
    /// No padding; the output shrinks by `taps - 1` per axis.
    Valid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: MvTensor<T>,
    pub weight: MvTensor<T>,
    pub bias: MvTensor<T>,
}

/// Grid geometry padded to three axes (leading axes of length 1).
#[derive(Debug, Clone)]
struct Geometry {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    taps: [usize; 3],
    shift: [usize; 3],
    out_spatial: Vec<usize>,
}

impl Geometry {
    fn new(in_spatial: &[usize], kernel: &[usize], padding: Padding) -> Result<Self> {
        if in_spatial.len() != kernel.len() || in_spatial.is_empty() || in_spatial.len() > 3 {
            return Err(Error::usage(format!(
                "kernel rank {} does not match input rank {}",
                kernel.len(),
                in_spatial.len()
            )));
        }
        if let Some(k) = kernel.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::usage(format!("kernel taps must be odd, got {k}")));
        }
        let pad = 3 - in_spatial.len();
        let mut g = Geometry {
            in_dims: [1; 3],
            out_dims: [1; 3],
            taps: [1; 3],
            shift: [0; 3],
            out_spatial: Vec::with_capacity(in_spatial.len()),
        };
        for (i, (&n, &k)) in in_spatial.iter().zip(kernel).enumerate() {
            let out = match padding {
                Padding::Same => n,
                Padding::Valid => {
                    if n < k {
                        return Err(Error::usage(format!(
                            "valid convolution needs input {n} >= kernel {k}"
                        )));
                    }
                    n - k + 1
                }
            };
            g.in_dims[pad + i] = n;
            g.out_dims[pad + i] = out;
            g.taps[pad + i] = k;
            g.shift[pad + i] = if padding == Padding::Same { k / 2 } else { 0 };
            g.out_spatial.push(out);
        }
        Ok(g)
    }

    fn ntaps(&self) -> usize {
        self.taps.iter().product()
    }

    fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Output positions along one axis whose input `o + t - shift` is in range.
    fn range(&self, axis: usize, t: usize) -> (usize, usize) {
        let s = self.shift[axis];
        let lo = s.saturating_sub(t);
        let hi = (self.in_dims[axis] + s).saturating_sub(t).min(self.out_dims[axis]);
        (lo, hi.max(lo))
    }

    /// Visit every (tap, contiguous run) pair: `f(tap, out_start, in_start, len)`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [_, in1, in2] = self.in_dims;
        let [_, out1, out2] = self.out_dims;
        let [_, k1, k2] = self.taps;
        let mut tap = 0;
        for t0 in 0..self.taps[0] {
            let (lo0, hi0) = self.range(0, t0);
            for t1 in 0..k1 {
                let (lo1, hi1) = self.range(1, t1);
                for t2 in 0..k2 {
                    let (lo2, hi2) = self.range(2, t2);
                    let len = hi2 - lo2;
                    if len > 0 {
                        for o0 in lo0..hi0 {
                            let i0 = o0 + t0 - self.shift[0];
                            for o1 in lo1..hi1 {
                                let i1 = o1 + t1 - self.shift[1];
                                let out_start = (o0 * out1 + o1) * out2 + lo2;
                                let in_start = (i0 * in1 + i1) * in2 + lo2 + t2 - self.shift[2];
                                f(tap, out_start, in_start, len);
                            }
                        }
                    }
                    tap += 1;
                }
            }
        }
    }
}

struct Dims {
    batch: usize,
    cin: usize,
    cout: usize,
    nb: usize,
}

fn check<T: Real>(x: &MvTensor<T>, w: &MvTensor<T>, padding: Padding) -> Result<(Geometry, Dims)> {
    if x.algebra() != w.algebra() {
        return Err(Error::usage(format!(
            "convolution input in {} but kernel in {}",
            x.algebra().signature(),
            w.algebra().signature()
        )));
    }
    if x.channels() != w.channels() {
        return Err(Error::usage(format!(
            "input has {} channels, kernel expects {}",
            x.channels(),
            w.channels()
        )));
    }
    let geom = Geometry::new(x.spatial(), w.spatial(), padding)?;
    let dims = Dims {
        batch: x.outer(),
        cin: x.channels(),
        cout: w.outer(),
        nb: x.blades(),
    };
    Ok((geom, dims))
}

fn check_bias<T: Real>(w: &MvTensor<T>, bias: &MvTensor<T>) -> Result<()> {
    if bias.algebra() != w.algebra() || bias.outer() != w.outer() || bias.channels() != 1 || bias.grid_len() != 1 {
        return Err(Error::usage(format!(
            "bias shape {:?} does not match {} output channels",
            bias.shape(),
            w.outer()
        )));
    }
    Ok(())
}

/// Dense real weight matrix, rows `(co, k)`, columns `(ci, j, tap)`.
fn expand_weights<T: Real>(w: &MvTensor<T>, d: &Dims, ntaps: usize) -> Vec<T> {
    let table = w.algebra().table();
    let kdim = d.cin * d.nb * ntaps;
    let wd = w.data();
    let mut out = vec![T::zero(); d.cout * d.nb * kdim];
    for co in 0..d.cout {
        for k in 0..d.nb {
            let row = &mut out[(co * d.nb + k) * kdim..(co * d.nb + k + 1) * kdim];
            for ci in 0..d.cin {
                for j in 0..d.nb {
                    let i = k ^ j;
                    let sign = table.sign(i, j);
                    if sign == 0 {
                        continue;
                    }
                    let src = &wd[((co * d.cin + ci) * d.nb + i) * ntaps..][..ntaps];
                    let dst = &mut row[(ci * d.nb + j) * ntaps..][..ntaps];
                    if sign > 0 {
                        dst.copy_from_slice(src);
                    } else {
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o = -v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fold a dense weight-matrix gradient back onto the kernel multivectors.
fn fold_weight_grad<T: Real>(dw_dense: &[T], w: &MvTensor<T>, d: &Dims, ntaps: usize) -> MvTensor<T> {
    let table = w.algebra().table();
    let kdim = d.cin * d.nb * ntaps;
    let mut grad = MvTensor::zeros(w.algebra(), d.cout, d.cin, w.spatial());
    let gd = grad.data_mut();
    for co in 0..d.cout {
        for ci in 0..d.cin {
            for i in 0..d.nb {
                let dst = &mut gd[((co * d.cin + ci) * d.nb + i) * ntaps..][..ntaps];
                for j in 0..d.nb {
                    let sign = table.sign(i, j);
                    if sign == 0 {
                        continue;
                    }
                    let k = i ^ j;
                    let src = &dw_dense[(co * d.nb + k) * kdim + (ci * d.nb + j) * ntaps..][..ntaps];
                    if sign > 0 {
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    } else {
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o -= v;
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Gather input planes of one batch item into a `(planes*taps) x out_len` matrix.
fn im2col<T: Real>(x_item: &[T], planes: usize, geom: &Geometry, cols: &mut [T]) {
    let (ntaps, in_len, out_len) = (geom.ntaps(), geom.in_len(), geom.out_len());
    cols.fill(T::zero());
    for plane in 0..planes {
        let src = &x_item[plane * in_len..(plane + 1) * in_len];
        let block = &mut cols[plane * ntaps * out_len..(plane + 1) * ntaps * out_len];
        geom.for_each_run(|tap, o, i, len| {
            block[tap * out_len + o..tap * out_len + o + len].copy_from_slice(&src[i..i + len]);
        });
    }
}

fn col2im<T: Real>(cols: &[T], planes: usize, geom: &Geometry, dx_item: &mut [T]) {
    let (ntaps, in_len, out_len) = (geom.ntaps(), geom.in_len(), geom.out_len());
    for plane in 0..planes {
        let dst = &mut dx_item[plane * in_len..(plane + 1) * in_len];
        let block = &cols[plane * ntaps * out_len..(plane + 1) * ntaps * out_len];
        geom.for_each_run(|tap, o, i, len| {
            for (d, &v) in dst[i..i + len].iter_mut().zip(&block[tap * out_len + o..tap * out_len + o + len]) {
                *d += v;
            }
        });
    }
}

pub fn conv_forward<T: Real>(
    x: &MvTensor<T>,
    w: &MvTensor<T>,
    bias: &MvTensor<T>,
    padding: Padding,
) -> Result<MvTensor<T>> {
    let (geom, d) = check(x, w, padding)?;
    check_bias(w, bias)?;
    let ntaps = geom.ntaps();
    let (in_len, out_len) = (geom.in_len(), geom.out_len());
    let kdim = d.cin * d.nb * ntaps;
    let m = d.cout * d.nb;
    let dense = expand_weights(w, &d, ntaps);
    let mut out = MvTensor::zeros(x.algebra(), d.batch, d.cout, &geom.out_spatial);
    let mut cols = vec![T::zero(); kdim * out_len];
    let item_in = d.cin * d.nb * in_len;
    for b in 0..d.batch {
        im2col(&x.data()[b * item_in..(b + 1) * item_in], d.cin * d.nb, &geom, &mut cols);
        let out_item = &mut out.data_mut()[b * m * out_len..(b + 1) * m * out_len];
        for (row, &bv) in out_item.chunks_mut(out_len).zip(bias.data()) {
            row.fill(bv);
        }
        gemm(MatRef::new(&dense, m, kdim), MatRef::new(&cols, kdim, out_len), T::one(), out_item);
    }
    Ok(out)
}

pub fn conv_backward<T: Real>(
    x: &MvTensor<T>,
    w: &MvTensor<T>,
    grad_out: &MvTensor<T>,
    padding: Padding,
) -> Result<ConvGrads<T>> {
    let (input, weight, bias) = conv_backward_impl(x, w, grad_out, padding, true)?;
    Ok(ConvGrads {
        input: input.expect("requested"),
        weight,
        bias,
    })
}

pub(crate) type ConvGradParts<T> = (Option<MvTensor<T>>, MvTensor<T>, MvTensor<T>);

pub(crate) fn conv_backward_impl<T: Real>(
    x: &MvTensor<T>,
    w: &MvTensor<T>,
    grad_out: &MvTensor<T>,
    padding: Padding,
    need_input: bool,
) -> Result<ConvGradParts<T>> {
    let (geom, d) = check(x, w, padding)?;
    if grad_out.outer() != d.batch || grad_out.channels() != d.cout || grad_out.spatial() != geom.out_spatial {
        return Err(Error::usage("output gradient shape does not match convolution"));
    }
    let ntaps = geom.ntaps();
    let (in_len, out_len) = (geom.in_len(), geom.out_len());
    let kdim = d.cin * d.nb * ntaps;
    let m = d.cout * d.nb;
    let dense = expand_weights(w, &d, ntaps);
    let mut dense_grad = vec![T::zero(); m * kdim];
    let mut dbias = MvTensor::zeros(w.algebra(), d.cout, 1, &[]);
    let mut dx = need_input.then(|| MvTensor::zeros(x.algebra(), d.batch, d.cin, x.spatial()));
    let mut cols = vec![T::zero(); kdim * out_len];
    let mut dcols = vec![T::zero(); kdim * out_len];
    let item_in = d.cin * d.nb * in_len;
    for b in 0..d.batch {
        let g_item = &grad_out.data()[b * m * out_len..(b + 1) * m * out_len];
        for (db, row) in dbias.data_mut().iter_mut().zip(g_item.chunks(out_len)) {
            *db += row.iter().fold(T::zero(), |acc, &v| acc + v);
        }
        im2col(&x.data()[b * item_in..(b + 1) * item_in], d.cin * d.nb, &geom, &mut cols);
        gemm(
            MatRef::new(g_item, m, out_len),
            MatRef::new(&cols, kdim, out_len).t(),
            T::one(),
            &mut dense_grad,
        );
        if let Some(dx) = dx.as_mut() {
            gemm(MatRef::new(&dense, m, kdim).t(), MatRef::new(g_item, m, out_len), T::zero(), &mut dcols);
            col2im(&dcols, d.cin * d.nb, &geom, &mut dx.data_mut()[b * item_in..(b + 1) * item_in]);
        }
    }
    let dw = fold_weight_grad(&dense_grad, w, &d, ntaps);
    Ok((dx, dw, dbias))
}

use crate::algebra::AlgebraKind;
use crate::dataset::Embedding;
use crate::error::{Error, Result};
use crate::fdtd::FieldFrame;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Upper clip of exported `|F² - F̂²|` maps.
pub const FARADAY_DIFF_CLIP: f64 = 0.02;

fn check(pred: &FieldFrame, gt: &FieldFrame) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::usage(format!(
            "frame shapes differ: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Sum of squared component differences per cell, averaged over the grid.
pub fn metric_mse(pred: &FieldFrame, gt: &FieldFrame) -> Result<f64> {
    check(pred, gt)?;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / gt.cells() as f64)
}

/// Mean over the grid of the dot product of the component vectors.
pub fn metric_correlation(pred: &FieldFrame, gt: &FieldFrame) -> Result<f64> {
    check(pred, gt)?;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
    Ok(sum / gt.cells() as f64)
}

/// Summed-volume table with one leading zero plane per axis.
struct Integral {
    dims: [usize; 3],
    table: Vec<f64>,
}

impl Integral {
    fn new(values: impl Iterator<Item = f64>, dims: [usize; 3]) -> Self {
        let ext = dims.map(|n| n + 1);
        let mut table = vec![0.0; ext[0] * ext[1] * ext[2]];
        let at = |i: usize, j: usize, k: usize| (i * ext[1] + j) * ext[2] + k;
        let mut values = values;
        for i in 1..ext[0] {
            for j in 1..ext[1] {
                for k in 1..ext[2] {
                    let v = values.next().expect("grid-sized input");
                    table[at(i, j, k)] = v + table[at(i - 1, j, k)] + table[at(i, j - 1, k)] + table[at(i, j, k - 1)]
                        - table[at(i - 1, j - 1, k)]
                        - table[at(i - 1, j, k - 1)]
                        - table[at(i, j - 1, k - 1)]
                        + table[at(i - 1, j - 1, k - 1)];
                }
            }
        }
        Self { dims: ext, table }
    }

    /// Sum over the box `lo..hi`.
    fn sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let e = self.dims;
        let at = |i: usize, j: usize, k: usize| self.table[(i * e[1] + j) * e[2] + k];
        at(hi[0], hi[1], hi[2]) - at(lo[0], hi[1], hi[2]) - at(hi[0], lo[1], hi[2]) - at(hi[0], hi[1], lo[2])
            + at(lo[0], lo[1], hi[2])
            + at(lo[0], hi[1], lo[2])
            + at(hi[0], lo[1], lo[2])
            - at(lo[0], lo[1], lo[2])
    }
}

/// Mean SSIM of one component over all fully contained windows.
fn ssim_component(x: &[f64], y: &[f64], dims: &[usize]) -> f64 {
    let mut d = [1usize; 3];
    d[..dims.len()].copy_from_slice(dims);
    let win: [usize; 3] = std::array::from_fn(|a| if a < dims.len() { SSIM_WINDOW.min(d[a]) } else { 1 });
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi == lo && x == y {
        return 1.0;
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let sx = Integral::new(x.iter().copied(), d);
    let sy = Integral::new(y.iter().copied(), d);
    let sxx = Integral::new(x.iter().map(|v| v * v), d);
    let syy = Integral::new(y.iter().map(|v| v * v), d);
    let sxy = Integral::new(x.iter().zip(y).map(|(a, b)| a * b), d);
    let n = (win[0] * win[1] * win[2]) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=d[0] - win[0] {
        for j in 0..=d[1] - win[1] {
            for k in 0..=d[2] - win[2] {
                let lo = [i, j, k];
                let hi = [i + win[0], j + win[1], k + win[2]];
                let mx = sx.sum(lo, hi) / n;
                let my = sy.sum(lo, hi) / n;
                let vx = (sxx.sum(lo, hi) / n - mx * mx).max(0.0);
                let vy = (syy.sum(lo, hi) / n - my * my).max(0.0);
                let cxy = sxy.sum(lo, hi) / n - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// SSIM per field component, averaged over components.
///
/// Uniform 7-cell windows (clipped to the grid), `K1 = 0.01`, `K2 = 0.03`,
/// dynamic range from the ground-truth component.
pub fn metric_ssim(pred: &FieldFrame, gt: &FieldFrame) -> Result<f64> {
    check(pred, gt)?;
    let comps = gt.components();
    let sum: f64 = (0..comps)
        .map(|c| ssim_component(pred.component(c), gt.component(c), gt.dims()))
        .sum();
    Ok(sum / comps as f64)
}

/// Per-cell `F²` of a frame embedded in `kind`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaradayMap {
    pub dims: Vec<usize>,
    pub scalar: Vec<f64>,
    /// Pseudoscalar part, present for 3D algebras.
    pub pseudoscalar: Option<Vec<f64>>,
}

pub fn faraday_map(frame: &FieldFrame, kind: AlgebraKind) -> Result<FaradayMap> {
    let emb = Embedding::new(kind);
    if frame.dim() != kind.spatial_dim() {
        return Err(Error::usage(format!("{}D frame does not match {kind}", frame.dim())));
    }
    let top = emb.algebra().pseudoscalar_blade();
    let three_d = kind.spatial_dim() == 3;
    let mut scalar = Vec::with_capacity(frame.cells());
    let mut pseudo = Vec::with_capacity(if three_d { frame.cells() } else { 0 });
    let mut values = vec![0.0; frame.components()];
    for cell in 0..frame.cells() {
        for (c, v) in values.iter_mut().enumerate() {
            *v = frame.component(c)[cell];
        }
        let sq = emb.embed_cell(&values)?.square();
        scalar.push(sq.scalar_part());
        if three_d {
            pseudo.push(sq.get(top));
        }
    }
    Ok(FaradayMap {
        dims: frame.dims().to_vec(),
        scalar,
        pseudoscalar: three_d.then_some(pseudo),
    })
}

/// `|a - b|` clipped to `[0, FARADAY_DIFF_CLIP]`.
pub fn clipped_difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().min(FARADAY_DIFF_CLIP))
        .collect()
}

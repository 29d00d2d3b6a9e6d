//! Trajectory persistence, field embeddings, windowing and batching.

mod container;
mod generate;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use container::{load_trajectory, read_trajectory, save_trajectory, write_trajectory, MAGIC, VERSION};
pub use generate::{generate, obstacle_preset, GenConfig, SplitSpec};

pub use crate::fdtd::{FieldFrame, Trajectory};
use crate::algebra::{Algebra, AlgebraKind, Blade, Multivector};
use crate::error::{Error, Result};
use crate::fdtd::GridSpec;
use crate::mvtensor::{MvTensor, Real};

/// Blade slot and sign for each field component of one algebra.
///
/// Slots are derived by geometric products with the basis and pseudoscalar,
/// so `F = E + I B` is assembled with the algebra's own sign conventions.
#[derive(Debug, Clone)]
pub struct Embedding {
    kind: AlgebraKind,
    algebra: Algebra,
    units: Vec<Multivector>,
    slots: Vec<(Blade, f64)>,
}

impl Embedding {
    pub fn new(kind: AlgebraKind) -> Self {
        let alg = kind.algebra();
        let gp = |a: &Multivector, b: &Multivector| a.gp(b).expect("same algebra");
        let units: Vec<Multivector> = match kind {
            AlgebraKind::Ga2 => vec![
                alg.basis_vector(0),
                alg.basis_vector(1),
                gp(&alg.pseudoscalar(), &alg.scalar(1.0)),
            ],
            AlgebraKind::Ga3 => {
                let e: Vec<_> = (0..3).map(|k| alg.basis_vector(k)).collect();
                let i = alg.pseudoscalar();
                e.iter().cloned().chain(e.iter().map(|ek| gp(&i, ek))).collect()
            }
            AlgebraKind::Sta2 => {
                let g0 = alg.basis_vector(0);
                vec![
                    gp(&alg.basis_vector(1), &g0),
                    gp(&alg.basis_vector(2), &g0),
                    gp(&alg.basis_vector(1), &alg.basis_vector(2)),
                ]
            }
            AlgebraKind::Sta3 => {
                let g0 = alg.basis_vector(0);
                let sigma: Vec<_> = (1..4).map(|k| gp(&alg.basis_vector(k), &g0)).collect();
                let i = alg.pseudoscalar();
                sigma.iter().cloned().chain(sigma.iter().map(|s| gp(&i, s))).collect()
            }
        };
        let slots = units
            .iter()
            .map(|u| {
                let nz: Vec<(usize, f64)> = u.coeffs().iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect();
                assert!(nz.len() == 1 && nz[0].1.abs() == 1.0, "embedding unit must be a signed blade");
                (Blade(nz[0].0 as u8), nz[0].1)
            })
            .collect();
        Self {
            kind,
            algebra: alg,
            units,
            slots,
        }
    }

    pub fn kind(&self) -> AlgebraKind {
        self.kind
    }

    pub fn algebra(&self) -> &Algebra {
        &self.algebra
    }

    pub fn components(&self) -> usize {
        self.slots.len()
    }

    /// Multivector carrying a unit value of field component `c`.
    pub fn unit(&self, c: usize) -> &Multivector {
        &self.units[c]
    }

    pub fn slot(&self, c: usize) -> (Blade, f64) {
        self.slots[c]
    }

    /// Blades populated by field components, in component order.
    pub fn mask(&self) -> Vec<Blade> {
        self.slots.iter().map(|&(b, _)| b).collect()
    }

    /// Multivector of one cell from its component values.
    pub fn embed_cell(&self, values: &[f64]) -> Result<Multivector> {
        if values.len() != self.components() {
            return Err(Error::usage(format!(
                "{} components given, {} expects {}",
                values.len(),
                self.kind,
                self.components()
            )));
        }
        let mut m = self.algebra.zero();
        for (&(b, s), &v) in self.slots.iter().zip(values) {
            m.coeffs_mut()[b.index()] += s * v;
        }
        Ok(m)
    }

    fn check_frame(&self, frame: &FieldFrame) -> Result<()> {
        if frame.dim() != self.kind.spatial_dim() {
            return Err(Error::usage(format!(
                "{}D frame cannot be embedded in {}",
                frame.dim(),
                self.kind
            )));
        }
        Ok(())
    }

    /// Writes `frame` into `(outer, channel)` of `t`, zeroing other blades.
    pub fn embed_into<T: Real>(&self, frame: &FieldFrame, t: &mut MvTensor<T>, outer: usize, channel: usize) -> Result<()> {
        self.check_frame(frame)?;
        if t.spatial() != frame.dims() || t.algebra().signature() != self.algebra.signature() {
            return Err(Error::usage("tensor does not match frame grid or algebra"));
        }
        for b in 0..self.algebra.num_blades() {
            t.plane_mut(outer, channel, Blade(b as u8)).fill(T::zero());
        }
        for (c, &(b, s)) in self.slots.iter().enumerate() {
            let src = frame.component(c);
            for (dst, &v) in t.plane_mut(outer, channel, b).iter_mut().zip(src) {
                *dst = T::from_f64(s * v);
            }
        }
        Ok(())
    }

    pub fn embed<T: Real>(&self, frame: &FieldFrame) -> Result<MvTensor<T>> {
        self.check_frame(frame)?;
        let mut t = MvTensor::zeros(&self.algebra, 1, 1, frame.dims());
        self.embed_into(frame, &mut t, 0, 0)?;
        Ok(t)
    }

    /// Reads the field components back; non-field blades are ignored.
    pub fn extract<T: Real>(&self, t: &MvTensor<T>, outer: usize, channel: usize) -> Result<FieldFrame> {
        if t.algebra().signature() != self.algebra.signature() {
            return Err(Error::usage(format!("tensor algebra is not {}", self.kind)));
        }
        if t.spatial().len() != self.kind.spatial_dim() {
            return Err(Error::usage("tensor spatial rank does not match the algebra"));
        }
        let mut frame = FieldFrame::zeros(t.spatial());
        for (c, &(b, s)) in self.slots.iter().enumerate() {
            let src = t.plane(outer, channel, b);
            for (dst, &v) in frame.component_mut(c).iter_mut().zip(src) {
                *dst = s * v.as_f64();
            }
        }
        Ok(frame)
    }
}

/// Consecutive saved frames `start..start + len` of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub trajectory: usize,
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Every `(2 inputs, 1 target)` window.
    Train,
    /// First two frames plus `m` continuation frames.
    Rollout { m: usize },
}

pub fn window(trajectory: usize, frames: usize, mode: WindowMode) -> Result<Vec<Window>> {
    match mode {
        WindowMode::Train => {
            if frames < 3 {
                return Err(Error::usage(format!("{frames} frames are too few for a training window")));
            }
            Ok((0..frames - 2)
                .map(|start| Window {
                    trajectory,
                    start,
                    len: 3,
                })
                .collect())
        }
        WindowMode::Rollout { m } => {
            if m < 1 || frames < 2 + m {
                return Err(Error::usage(format!("rollout m={m} needs {} frames, trajectory has {frames}", 2 + m)));
            }
            Ok(vec![Window {
                trajectory,
                start: 0,
                len: 2 + m,
            }])
        }
    }
}

/// Shuffled index batches for one epoch; the last partial batch is kept.
pub fn batches(samples: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub files: Vec<String>,
    pub sequences: usize,
    pub frames: usize,
    #[serde(default)]
    pub obstacles: String,
}

/// Trajectory files per split, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub grid: GridSpec,
    pub stride: usize,
    pub frames_per_sequence: usize,
    pub splits: BTreeMap<String, SplitEntry>,
}

impl SplitManifest {
    pub const FILE_NAME: &'static str = "manifest.toml";

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (name, entry) in &self.splits {
            if entry.files.len() != entry.sequences || entry.frames != entry.sequences * self.frames_per_sequence {
                return Err(Error::config(format!("split '{name}' counts do not match its file list")));
            }
            for f in &entry.files {
                if let Some(other) = seen.insert(f.as_str(), name.as_str()) {
                    return Err(Error::config(format!("file '{f}' appears in splits '{other}' and '{name}'")));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&SplitEntry> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::usage(format!("manifest has no split '{name}'")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(Self::FILE_NAME), self.to_toml()?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(dir.join(Self::FILE_NAME))?)
    }
}

/// Trajectories of one split held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(names: Vec<String>, trajectories: Vec<Trajectory>) -> Self {
        Self { names, trajectories }
    }

    pub fn load_split(dir: &Path, manifest: &SplitManifest, split: &str) -> Result<Self> {
        let entry = manifest.split(split)?;
        let trajectories = entry
            .files
            .iter()
            .map(|f| load_trajectory(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(entry.files.clone(), trajectories))
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn windows(&self, mode: WindowMode) -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for (i, t) in self.trajectories.iter().enumerate() {
            out.extend(window(i, t.frames.len(), mode)?);
        }
        Ok(out)
    }

    pub fn frames(&self, w: &Window) -> &[FieldFrame] {
        &self.trajectories[w.trajectory].frames[w.frames()]
    }

    /// Inputs `(B, 2, grid)` and targets `(B, 1, grid)` for training windows.
    pub fn batch<T: Real>(&self, windows: &[Window], emb: &Embedding) -> Result<(MvTensor<T>, MvTensor<T>)> {
        let first = windows.first().ok_or_else(|| Error::usage("empty batch"))?;
        let dims = self.trajectories[first.trajectory].grid.dims.clone();
        let mut x = MvTensor::zeros(emb.algebra(), windows.len(), 2, &dims);
        let mut y = MvTensor::zeros(emb.algebra(), windows.len(), 1, &dims);
        for (b, w) in windows.iter().enumerate() {
            if w.len != 3 {
                return Err(Error::usage("training batches need 3-frame windows"));
            }
            let f = self.frames(w);
            emb.embed_into(&f[0], &mut x, b, 0)?;
            emb.embed_into(&f[1], &mut x, b, 1)?;
            emb.embed_into(&f[2], &mut y, b, 0)?;
        }
        Ok((x, y))
    }
}

/// Inputs `(1, 2, grid)` from two frames.
pub fn input_pair<T: Real>(a: &FieldFrame, b: &FieldFrame, emb: &Embedding) -> Result<MvTensor<T>> {
    let mut x = MvTensor::zeros(emb.algebra(), 1, 2, a.dims());
    emb.embed_into(a, &mut x, 0, 0)?;
    emb.embed_into(b, &mut x, 0, 1)?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::algebra::parse_blade;

    fn random_frame(dims: &[usize], rng: &mut ChaCha8Rng) -> FieldFrame {
        let mut f = FieldFrame::zeros(dims);
        f.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        f
    }

    #[test]
    fn round_trip_all_algebras() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in AlgebraKind::ALL {
            let emb = Embedding::new(kind);
            let dims: Vec<usize> = vec![5; kind.spatial_dim()];
            let f = random_frame(&dims, &mut rng);
            let t = emb.embed::<f64>(&f).unwrap();
            assert_eq!(emb.extract(&t, 0, 0).unwrap(), f);
            let zero = emb.embed::<f64>(&FieldFrame::zeros(&dims)).unwrap();
            assert!(zero.data().iter().all(|&v| v == 0.0));
            assert_eq!(emb.extract(&zero, 0, 0).unwrap(), FieldFrame::zeros(&dims));
        }
    }

    #[test]
    fn spurious_blades_are_ignored() {
        let emb = Embedding::new(AlgebraKind::Sta2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&[4, 4], &mut rng);
        let mut t = emb.embed::<f64>(&f).unwrap();
        t.plane_mut(0, 0, Blade::SCALAR).fill(3.0);
        t.plane_mut(0, 0, Blade(0b111)).fill(-2.0);
        assert_eq!(emb.extract(&t, 0, 0).unwrap(), f);
    }

    #[test]
    fn sta2_ex_lands_on_g10() {
        let emb = Embedding::new(AlgebraKind::Sta2);
        let m = emb.embed_cell(&[1.0, 0.0, 0.0]).unwrap();
        let g10 = emb.algebra().named("g10").unwrap();
        assert_eq!(m, g10);
        // γ10 = -γ01 in ascending storage order
        let (blade, sign) = parse_blade("g10", emb.algebra().signature()).unwrap();
        assert_eq!(m.get(blade), f64::from(sign));
        assert_eq!(m.coeffs().iter().filter(|&&c| c != 0.0).count(), 1);
    }

    #[test]
    fn ga3_b3_uses_pseudoscalar_product() {
        let emb = Embedding::new(AlgebraKind::Ga3);
        let alg = emb.algebra();
        let m = emb.embed_cell(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let expected = alg.pseudoscalar().gp(&alg.basis_vector(2)).unwrap();
        assert_eq!(m, expected);
        assert_eq!(emb.slot(5).0, Blade(0b011));
    }

    #[test]
    fn embed_rejects_wrong_rank() {
        let emb = Embedding::new(AlgebraKind::Ga3);
        assert!(emb.embed::<f64>(&FieldFrame::zeros(&[4, 4])).is_err());
        assert!(emb.embed_cell(&[1.0]).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(window(0, 12, WindowMode::Train).unwrap().len(), 10);
        let r = window(3, 12, WindowMode::Rollout { m: 10 }).unwrap();
        assert_eq!(r, vec![Window { trajectory: 3, start: 0, len: 12 }]);
        assert!(window(0, 3, WindowMode::Rollout { m: 2 }).is_err());
        assert!(window(0, 2, WindowMode::Train).is_err());
        for w in window(1, 7, WindowMode::Train).unwrap() {
            assert_eq!(w.len, 3);
            assert!(w.start + 2 < 7);
        }
    }

    #[test]
    fn batch_shapes_and_order() {
        let b = batches(10, 4, 7, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b, batches(10, 4, 7, 0).unwrap());
        let other = batches(10, 4, 7, 1).unwrap();
        assert_ne!(b, other);
        let mut flat: Vec<usize> = other.concat();
        flat.sort_unstable();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
        assert!(batches(10, 0, 7, 0).is_err());
    }

    #[test]
    fn manifest_round_trip_and_disjointness() {
        let entry = |files: &[&str]| SplitEntry {
            files: files.iter().map(|s| s.to_string()).collect(),
            sequences: files.len(),
            frames: files.len() * 12,
            obstacles: "none".into(),
        };
        let mut m = SplitManifest {
            grid: GridSpec::new(&[16, 16], 5e-7),
            stride: 25,
            frames_per_sequence: 12,
            splits: BTreeMap::from([
                ("train".to_string(), entry(&["train/a.bin", "train/b.bin"])),
                ("val".to_string(), entry(&["val/c.bin"])),
            ]),
        };
        let text = m.to_toml().unwrap();
        assert_eq!(SplitManifest::from_toml(&text).unwrap(), m);
        m.splits.insert("test".into(), entry(&["train/a.bin"]));
        assert!(m.validate().is_err());
    }
}

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{save_trajectory, SplitEntry, SplitManifest};
use crate::error::{Error, Result};
use crate::fdtd::{random_sources, run_trajectory, GridSpec, ObstacleSpec, TrajectoryConfig};

/// Relative permittivity of the obstacle presets, `1.7²`.
pub const OBSTACLE_PERMITTIVITY: f64 = 1.7 * 1.7;

// (x range, y range) as fractions of the interior grid
const SEEN: [[(f64, f64); 2]; 5] = [
    [(0.375, 0.625), (0.375, 0.625)],
    [(0.25, 0.75), (0.45, 0.55)],
    [(0.2, 0.4), (0.2, 0.4)],
    [(0.6, 0.85), (0.55, 0.8)],
    [(0.45, 0.55), (0.15, 0.85)],
];
const UNSEEN: [[(f64, f64); 2]; 3] = [
    [(0.3, 0.7), (0.3, 0.7)],
    [(0.15, 0.35), (0.6, 0.9)],
    [(0.55, 0.8), (0.2, 0.35)],
];
const DEPTH: (f64, f64) = (0.375, 0.625);

fn scaled_box(fracs: &[(f64, f64)], grid: &GridSpec) -> ObstacleSpec {
    let (lo, hi) = grid
        .dims
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            let (f0, f1) = fracs.get(a).copied().unwrap_or(DEPTH);
            let lo = ((f0 * n as f64).floor() as usize).min(n - 1);
            let hi = ((f1 * n as f64).ceil() as usize).clamp(lo + 1, n);
            (lo, hi)
        })
        .unzip();
    ObstacleSpec {
        lo,
        hi,
        rel_permittivity: OBSTACLE_PERMITTIVITY,
    }
}

/// Obstacle configurations of a named preset, each a list of boxes.
///
/// `none` is a single empty configuration; `fig7-seen` and `fig7-unseen`
/// hold 5 and 3 single-box dielectric obstacles scaled to the grid.
pub fn obstacle_preset(name: &str, grid: &GridSpec) -> Result<Vec<Vec<ObstacleSpec>>> {
    let boxes: &[[(f64, f64); 2]] = match name {
        "" | "none" => return Ok(vec![Vec::new()]),
        "fig7-seen" => &SEEN,
        "fig7-unseen" => &UNSEEN,
        other => return Err(Error::config(format!("unknown obstacle preset '{other}'"))),
    };
    Ok(boxes.iter().map(|b| vec![scaled_box(b, grid)]).collect())
}

fn default_obstacles() -> String {
    "none".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub sequences: usize,
    #[serde(default = "default_obstacles")]
    pub obstacles: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub grid: GridSpec,
    pub frames: usize,
    pub stride: usize,
    #[serde(default)]
    pub warmup: usize,
    /// Random point sources per trajectory.
    pub sources: usize,
    /// Source wavelength in meters.
    pub wavelength: f64,
    pub splits: Vec<SplitSpec>,
}

struct Job {
    split: usize,
    index: usize,
    global: u64,
    obstacles: Vec<ObstacleSpec>,
    file: String,
}

/// Generates every split into `out_dir` and writes the manifest.
///
/// Trajectory `k` (counted across splits in order) draws its sources from
/// stream `k` of a generator seeded with `seed`, so the output does not
/// depend on the number of worker threads.
pub fn generate(cfg: &GenConfig, seed: u64, out_dir: &Path, threads: usize) -> Result<SplitManifest> {
    TrajectoryConfig::new(cfg.frames, cfg.stride, seed).validate(&cfg.grid)?;
    if cfg.splits.is_empty() {
        return Err(Error::config("no splits requested"));
    }
    let mut jobs = Vec::new();
    let mut global = 0u64;
    for (s, split) in cfg.splits.iter().enumerate() {
        if cfg.splits[..s].iter().any(|o| o.name == split.name) {
            return Err(Error::config(format!("split '{}' listed twice", split.name)));
        }
        let presets = obstacle_preset(&split.obstacles, &cfg.grid)?;
        for index in 0..split.sequences {
            jobs.push(Job {
                split: s,
                index,
                global,
                obstacles: presets[index % presets.len()].clone(),
                file: format!("{}/traj_{index:05}.bin", split.name),
            });
            global += 1;
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter().try_for_each(|job| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(job.global);
            let mut tcfg = TrajectoryConfig::new(cfg.frames, cfg.stride, seed.wrapping_add(job.global));
            tcfg.warmup = cfg.warmup;
            tcfg.sources = random_sources(&cfg.grid, cfg.sources, cfg.wavelength, &mut rng);
            tcfg.obstacles = job.obstacles.clone();
            let traj = run_trajectory(&tcfg, &cfg.grid).map_err(|e| match e {
                Error::Blowup { context } => Error::blowup(format!(
                    "{context} in split '{}' sequence {}",
                    cfg.splits[job.split].name, job.index
                )),
                other => other,
            })?;
            save_trajectory(&traj, &out_dir.join(&job.file))
        })
    })?;
    let splits = cfg
        .splits
        .iter()
        .enumerate()
        .map(|(s, split)| {
            let files: Vec<String> = jobs.iter().filter(|j| j.split == s).map(|j| j.file.clone()).collect();
            let entry = SplitEntry {
                sequences: files.len(),
                frames: files.len() * cfg.frames,
                files,
                obstacles: split.obstacles.clone(),
            };
            (split.name.clone(), entry)
        })
        .collect();
    let manifest = SplitManifest {
        grid: cfg.grid.clone(),
        stride: cfg.stride,
        frames_per_sequence: cfg.frames,
        splits,
    };
    manifest.validate()?;
    manifest.save(out_dir)?;
    Ok(manifest)
}

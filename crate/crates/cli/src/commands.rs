use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use stapde::dataset::{generate, load_trajectory, save_trajectory, Dataset, SplitManifest, Trajectory};
use stapde::harness::{
    clipped_difference, evaluate_single_step, faraday_map, mean_by_step, rollout_dataset, train, write_metrics_csv,
    EpochRecord, EvalTags, FaradayMap, MetricsRecord, ModelPredictor, Persistence, Predictor,
};
use stapde::models::Model;
use stapde::selftest;
use stapde::{AlgebraKind, Error};

use crate::config::{ExperimentConfig, PredictorKind};

pub const CHECKPOINT: &str = "best.ckpt";
pub const LOSS_CURVE: &str = "loss_curve.csv";
pub const EVAL_CSV: &str = "metrics_eval.csv";
pub const ROLLOUT_CSV: &str = "metrics_rollout.csv";
pub const ROLLOUT_DIR: &str = "rollout";
pub const EXPORT_DIR: &str = "export";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

pub fn gen(cfg: &ExperimentConfig, threads: usize) -> Result<()> {
    let dir = cfg.data_dir();
    let manifest = generate(cfg.gen()?, cfg.seed, &dir, threads)?;
    cfg.echo(&dir)?;
    for (name, entry) in &manifest.splits {
        println!("{name}: {} sequences, {} frames", entry.sequences, entry.frames);
    }
    Ok(())
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<(PathBuf, SplitManifest)> {
    let dir = cfg.data_dir();
    let manifest = SplitManifest::load(&dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    Ok((dir, manifest))
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let tc = cfg.train_config()?;
    let (dir, manifest) = load_manifest(cfg)?;
    let train_set = Dataset::load_split(&dir, &manifest, &cfg.train.train_split)?;
    let val_set = Dataset::load_split(&dir, &manifest, &cfg.train.val_split)?;
    let out = train(&tc, &train_set, &val_set, |r| {
        println!("epoch {:>3}  train {:.6e}  val {:.6e}", r.epoch, r.train_loss, r.val_loss)
    })?;
    cfg.echo(&cfg.output_dir)?;
    out.best.save(&cfg.output_dir.join(CHECKPOINT))?;
    write_loss_curve(&cfg.output_dir.join(LOSS_CURVE), &out.history)?;
    println!(
        "best epoch {} of {}, {} parameters",
        out.best_epoch,
        out.history.len(),
        out.best.param_count()
    );
    Ok(())
}

fn write_loss_curve(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_loss_curve(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<Vec<EpochRecord>, _>>()?)
}

/// Model family name used in metric tables.
fn family(kind: AlgebraKind) -> &'static str {
    if kind.is_spacetime() {
        "staresnet"
    } else {
        "clifford-resnet"
    }
}

enum Loaded {
    Model(ModelPredictor<f64>),
    Persistence,
    Oracle,
}

impl Loaded {
    fn as_predictor(&self) -> Option<&dyn Predictor> {
        match self {
            Loaded::Model(m) => Some(m),
            Loaded::Persistence => Some(&Persistence),
            Loaded::Oracle => None,
        }
    }

    fn tags(&self, cfg: &ExperimentConfig, stride: usize, split: &str) -> EvalTags {
        let (model, algebra) = match self {
            Loaded::Model(m) => (m.label(), m.algebra_name()),
            Loaded::Persistence => ("persistence".into(), "none".into()),
            Loaded::Oracle => ("oracle".into(), "none".into()),
        };
        EvalTags {
            model: if cfg.eval.label.is_empty() { model } else { cfg.eval.label.clone() },
            algebra,
            dt_stride: stride,
            split: split.to_string(),
        }
    }
}

/// Evaluation runs in 64-bit on the `f32` checkpoint.
fn load_predictor(cfg: &ExperimentConfig) -> Result<Loaded> {
    Ok(match cfg.eval.predictor {
        PredictorKind::Model => {
            let path = cfg.output_dir.join(CHECKPOINT);
            let model = Model::<f32>::load(&path)?;
            let label = family(model.config().algebra);
            Loaded::Model(ModelPredictor::new(model.cast::<f64>(), label))
        }
        PredictorKind::Persistence => Loaded::Persistence,
        PredictorKind::Oracle => Loaded::Oracle,
    })
}

fn eval_splits(cfg: &ExperimentConfig, manifest: &SplitManifest) -> Result<Vec<String>> {
    let splits: Vec<String> = if cfg.eval.splits.is_empty() {
        manifest.splits.keys().filter(|k| k.starts_with("test")).cloned().collect()
    } else {
        cfg.eval.splits.clone()
    };
    if splits.is_empty() {
        return Err(usage("no evaluation splits: name them in eval.splits or generate a 'test*' split"));
    }
    for s in &splits {
        manifest.split(s)?;
    }
    Ok(splits)
}

fn report(split: &str, rows: &[MetricsRecord]) {
    for (m, s) in mean_by_step(rows) {
        println!("{split} m={m}: mse {:.6e}  corr {:.6e}  ssim {:.6}", s.mse, s.corr, s.ssim);
    }
}

pub fn eval(cfg: &ExperimentConfig) -> Result<()> {
    let (dir, manifest) = load_manifest(cfg)?;
    let splits = eval_splits(cfg, &manifest)?;
    let predictor = load_predictor(cfg)?;
    let mut rows = Vec::new();
    for split in &splits {
        let data = Dataset::load_split(&dir, &manifest, split)?;
        let tags = predictor.tags(cfg, manifest.stride, split);
        let r = evaluate_single_step(predictor.as_predictor(), &data, &tags)?;
        report(split, &r);
        rows.extend(r);
    }
    cfg.echo(&cfg.output_dir)?;
    write_metrics(&cfg.output_dir.join(EVAL_CSV), &rows)
}

fn write_metrics(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    write_metrics_csv(std::io::BufWriter::new(file), rows)?;
    Ok(())
}

pub fn rollout(cfg: &ExperimentConfig) -> Result<()> {
    let (dir, manifest) = load_manifest(cfg)?;
    let splits = eval_splits(cfg, &manifest)?;
    cfg.rollout.validate(manifest.frames_per_sequence)?;
    let predictor = load_predictor(cfg)?;
    let mut rows = Vec::new();
    for split in &splits {
        let data = Dataset::load_split(&dir, &manifest, split)?;
        let tags = predictor.tags(cfg, manifest.stride, split);
        let results = rollout_dataset(predictor.as_predictor(), &data, &cfg.rollout)?;
        let mut split_rows = Vec::new();
        for (name, r) in data.names.iter().zip(&results) {
            let traj = Trajectory {
                grid: manifest.grid.clone(),
                stride: manifest.stride,
                frames: r.predictions.clone(),
            };
            let path = cfg.output_dir.join(ROLLOUT_DIR).join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            save_trajectory(&traj, &path)?;
            split_rows.extend(tags.records(r));
        }
        report(split, &split_rows);
        rows.extend(split_rows);
    }
    cfg.echo(&cfg.output_dir)?;
    write_metrics(&cfg.output_dir.join(ROLLOUT_CSV), &rows)
}

/// Rows of the first axis pair; 3D grids are written as slices along the last axis.
fn grid_text(dims: &[usize], values: &[f64]) -> String {
    let mut out = String::new();
    let (nx, ny) = (dims[0], dims[1]);
    let nz = dims.get(2).copied().unwrap_or(1);
    for k in 0..nz {
        if dims.len() == 3 {
            let _ = writeln!(out, "# slice {k}");
        }
        for i in 0..nx {
            let row: Vec<String> = (0..ny).map(|j| format!("{:.9e}", values[(i * ny + j) * nz + k])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

fn map_text(map: &FaradayMap, pick: impl Fn(&[f64]) -> Vec<f64>) -> String {
    let mut out = String::new();
    if map.pseudoscalar.is_some() {
        out.push_str("# scalar\n");
    }
    out.push_str(&grid_text(&map.dims, &pick(&map.scalar)));
    if let Some(ps) = &map.pseudoscalar {
        out.push_str("# pseudoscalar\n");
        out.push_str(&grid_text(&map.dims, &pick(ps)));
    }
    out
}

pub fn export(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.export.steps.is_empty() {
        println!("export: empty selection, no files written");
        return Ok(());
    }
    let (dir, manifest) = load_manifest(cfg)?;
    let split = match &cfg.export.split {
        Some(s) => s.clone(),
        None => eval_splits(cfg, &manifest)?.remove(0),
    };
    let entry = manifest.split(&split)?;
    let seq = cfg.export.sequence;
    let name = entry
        .files
        .get(seq)
        .ok_or_else(|| usage(format!("split '{split}' has {} sequences, asked for {seq}", entry.files.len())))?;
    let pred_path = cfg.output_dir.join(ROLLOUT_DIR).join(name);
    if !pred_path.exists() {
        return Err(usage(format!("{} not found; run rollout first", pred_path.display())));
    }
    let preds = load_trajectory(&pred_path)?;
    let gt = load_trajectory(&dir.join(name))?;
    let kind = match cfg.model {
        Some(m) => m.algebra,
        None if manifest.grid.dim() == 3 => AlgebraKind::Sta3,
        None => AlgebraKind::Sta2,
    };
    let out_dir = cfg.output_dir.join(EXPORT_DIR);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for &m in &cfg.export.steps {
        if m < 1 || m > preds.frames.len() {
            return Err(usage(format!("step {m} outside the stored rollout 1..={}", preds.frames.len())));
        }
        let g = faraday_map(&gt.frames[m + 1], kind)?;
        let p = faraday_map(&preds.frames[m - 1], kind)?;
        let diff = FaradayMap {
            dims: g.dims.clone(),
            scalar: clipped_difference(&g.scalar, &p.scalar),
            pseudoscalar: match (&g.pseudoscalar, &p.pseudoscalar) {
                (Some(a), Some(b)) => Some(clipped_difference(a, b)),
                _ => None,
            },
        };
        let stem = format!("{split}_seq{seq:03}_m{m:02}");
        for (tag, map) in [("gt", &g), ("pred", &p), ("diff", &diff)] {
            let path = out_dir.join(format!("{stem}_{tag}.txt"));
            fs::write(&path, map_text(map, <[f64]>::to_vec)).with_context(|| format!("writing {}", path.display()))?;
        }
        println!("exported {stem}");
    }
    let curve = cfg.output_dir.join(LOSS_CURVE);
    if curve.exists() {
        let mut table = String::from("epoch train_loss val_loss\n");
        for r in read_loss_curve(&curve)? {
            let _ = writeln!(table, "{} {:.9e} {:.9e}", r.epoch, r.train_loss, r.val_loss);
        }
        fs::write(out_dir.join("loss_table.txt"), table)?;
    }
    cfg.echo(&out_dir)
}

/// Returns whether every check passed.
pub fn selftest() -> Result<bool> {
    let mut ok = true;
    for r in selftest::run_all()? {
        println!("{r}");
        ok &= r.passed;
    }
    Ok(ok)
}

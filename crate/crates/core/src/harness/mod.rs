//! Training, evaluation metrics, rollout and Faraday maps.

mod metrics;
mod train;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    clipped_difference, faraday_map, metric_correlation, metric_mse, metric_ssim, FaradayMap, FARADAY_DIFF_CLIP,
    SSIM_K1, SSIM_K2, SSIM_WINDOW,
};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

use crate::dataset::{input_pair, Dataset, Embedding, WindowMode};
use crate::error::{Error, Result};
use crate::fdtd::FieldFrame;
use crate::models::Model;
use crate::mvtensor::Real;

/// Predicts the next frame from the two preceding ones.
pub trait Predictor: Sync {
    fn label(&self) -> String;
    fn algebra_name(&self) -> String;
    fn predict(&self, prev: &FieldFrame, cur: &FieldFrame) -> Result<FieldFrame>;
}

/// A network evaluated in the precision `T`.
#[derive(Debug, Clone)]
pub struct ModelPredictor<T> {
    model: Model<T>,
    embedding: Embedding,
    label: String,
}

impl<T: Real> ModelPredictor<T> {
    pub fn new(model: Model<T>, label: impl Into<String>) -> Self {
        let embedding = Embedding::new(model.config().algebra);
        Self {
            model,
            embedding,
            label: label.into(),
        }
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }
}

impl<T: Real> Predictor for ModelPredictor<T> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn algebra_name(&self) -> String {
        self.model.config().algebra.name().to_string()
    }

    fn predict(&self, prev: &FieldFrame, cur: &FieldFrame) -> Result<FieldFrame> {
        let x = input_pair::<T>(prev, cur, &self.embedding)?;
        let y = self.model.forward(&x)?;
        self.embedding.extract(&y, 0, 0)
    }
}

/// Baseline that repeats the most recent frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Predictor for Persistence {
    fn label(&self) -> String {
        "persistence".into()
    }

    fn algebra_name(&self) -> String {
        "none".into()
    }

    fn predict(&self, _prev: &FieldFrame, cur: &FieldFrame) -> Result<FieldFrame> {
        Ok(cur.clone())
    }
}

/// One CSV row of evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: String,
    pub algebra: String,
    pub dt_stride: usize,
    pub split: String,
    pub rollout_m: usize,
    pub mse: f64,
    pub corr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub m: usize,
    /// Feed ground truth instead of predictions at every step.
    pub teacher_forced: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            m: 10,
            teacher_forced: false,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.m < 1 || self.m + 2 > frames {
            return Err(Error::usage(format!(
                "rollout m={} must lie in 1..={}",
                self.m,
                frames.saturating_sub(2)
            )));
        }
        Ok(())
    }
}

/// Per-step metrics of one frame pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub mse: f64,
    pub corr: f64,
    pub ssim: f64,
}

impl StepMetrics {
    pub fn compute(pred: &FieldFrame, gt: &FieldFrame) -> Result<Self> {
        Ok(Self {
            mse: metric_mse(pred, gt)?,
            corr: metric_correlation(pred, gt)?,
            ssim: metric_ssim(pred, gt)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Predictions for frames `2..2 + m`.
    pub predictions: Vec<FieldFrame>,
    pub metrics: Vec<StepMetrics>,
}

fn rollout_with(
    frames: &[FieldFrame],
    cfg: &RolloutConfig,
    mut step: impl FnMut(&FieldFrame, &FieldFrame, &FieldFrame) -> Result<FieldFrame>,
) -> Result<RolloutResult> {
    cfg.validate(frames.len())?;
    let mut predictions: Vec<FieldFrame> = Vec::with_capacity(cfg.m);
    let mut metrics = Vec::with_capacity(cfg.m);
    for j in 0..cfg.m {
        let target = &frames[j + 2];
        let pred = if cfg.teacher_forced || j == 0 {
            step(&frames[j], &frames[j + 1], target)?
        } else if j == 1 {
            step(&frames[1], &predictions[0], target)?
        } else {
            step(&predictions[j - 2], &predictions[j - 1], target)?
        };
        if !pred.all_finite() {
            return Err(Error::blowup(format!("non-finite prediction at rollout step {}", j + 1)));
        }
        metrics.push(StepMetrics::compute(&pred, target)?);
        predictions.push(pred);
    }
    Ok(RolloutResult { predictions, metrics })
}

/// Autoregressive rollout over `frames[0..2 + m]`.
pub fn rollout(predictor: &dyn Predictor, frames: &[FieldFrame], cfg: &RolloutConfig) -> Result<RolloutResult> {
    rollout_with(frames, cfg, |a, b, _| predictor.predict(a, b))
}

/// Rollout whose "predictions" are the ground-truth frames themselves.
pub fn rollout_oracle(frames: &[FieldFrame], cfg: &RolloutConfig) -> Result<RolloutResult> {
    rollout_with(frames, cfg, |_, _, truth| Ok(truth.clone()))
}

/// Labels attached to every row of an evaluation.
#[derive(Debug, Clone)]
pub struct EvalTags {
    pub model: String,
    pub algebra: String,
    pub dt_stride: usize,
    pub split: String,
}

impl EvalTags {
    pub fn for_predictor(p: &dyn Predictor, dt_stride: usize, split: &str) -> Self {
        Self {
            model: p.label(),
            algebra: p.algebra_name(),
            dt_stride,
            split: split.to_string(),
        }
    }

    /// One row per rollout step.
    pub fn records(&self, r: &RolloutResult) -> Vec<MetricsRecord> {
        r.metrics.iter().enumerate().map(|(j, s)| self.record(j + 1, s)).collect()
    }

    fn record(&self, m: usize, s: &StepMetrics) -> MetricsRecord {
        MetricsRecord {
            model: self.model.clone(),
            algebra: self.algebra.clone(),
            dt_stride: self.dt_stride,
            split: self.split.clone(),
            rollout_m: m,
            mse: s.mse,
            corr: s.corr,
            ssim: s.ssim,
        }
    }
}

/// Rollout of every sequence in `data`, in sequence order.
/// `None` evaluates the ground-truth oracle.
pub fn rollout_dataset(predictor: Option<&dyn Predictor>, data: &Dataset, cfg: &RolloutConfig) -> Result<Vec<RolloutResult>> {
    let windows = data.windows(WindowMode::Rollout { m: cfg.m })?;
    windows
        .par_iter()
        .map(|w| {
            let frames = data.frames(w);
            let r = match predictor {
                Some(p) => rollout(p, frames, cfg),
                None => rollout_oracle(frames, cfg),
            };
            r.map_err(|e| match e {
                Error::Blowup { context } => {
                    Error::blowup(format!("{context} on sequence {}", data.names[w.trajectory]))
                }
                e => e,
            })
        })
        .collect()
}

/// Rollout of every sequence in `data`: `m` rows per sequence, in sequence order.
pub fn evaluate_rollout(
    predictor: Option<&dyn Predictor>,
    data: &Dataset,
    cfg: &RolloutConfig,
    tags: &EvalTags,
) -> Result<Vec<MetricsRecord>> {
    let results = rollout_dataset(predictor, data, cfg)?;
    Ok(results.iter().flat_map(|r| tags.records(r)).collect())
}

/// Single-step metrics of every training-style window, one row each.
pub fn evaluate_single_step(
    predictor: Option<&dyn Predictor>,
    data: &Dataset,
    tags: &EvalTags,
) -> Result<Vec<MetricsRecord>> {
    let windows = data.windows(WindowMode::Train)?;
    let rows = windows
        .par_iter()
        .map(|w| {
            let f = data.frames(w);
            let pred = match predictor {
                Some(p) => p.predict(&f[0], &f[1])?,
                None => f[2].clone(),
            };
            Ok(tags.record(1, &StepMetrics::compute(&pred, &f[2])?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

/// Mean of each metric over rows grouped by `rollout_m`, ordered by `m`.
pub fn mean_by_step(rows: &[MetricsRecord]) -> Vec<(usize, StepMetrics)> {
    let mut groups: std::collections::BTreeMap<usize, (StepMetrics, usize)> = Default::default();
    for r in rows {
        let (acc, n) = groups.entry(r.rollout_m).or_insert((
            StepMetrics {
                mse: 0.0,
                corr: 0.0,
                ssim: 0.0,
            },
            0,
        ));
        acc.mse += r.mse;
        acc.corr += r.corr;
        acc.ssim += r.ssim;
        *n += 1;
    }
    groups
        .into_iter()
        .map(|(m, (s, n))| {
            let n = n as f64;
            (
                m,
                StepMetrics {
                    mse: s.mse / n,
                    corr: s.corr / n,
                    ssim: s.ssim / n,
                },
            )
        })
        .collect()
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["model", "algebra", "dt_stride", "split", "rollout_m", "mse", "corr", "ssim"])
            .map_err(csv_err)?;
    }
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::format(format!("metrics CSV: {e}"))
    }
}

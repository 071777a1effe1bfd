//! Fitting, evaluation, baselines and the ablation/sweep experiment suite.

mod baselines;
mod experiments;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use baselines::{linear_regression, moving_average, persistence, window_features, LinearModel};
pub use experiments::{
    ablation_csv, mean_metrics, run_ablations, run_method, run_seeds, sweep, sweep_configs, sweep_csv, train_seeds,
    AblationRow, SweepParam, SweepPoint,
};

use crate::autodiff::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::graphs::{build_courier_graph, build_district_graph, normalize_adjacency, CourierGraph, NormalizedAdjacency};
use crate::model::{DeepSta, ModelConfig, ModelInputs, Variant};
use crate::node2vec::{embed, DistrictEmbedding, WalkConfig};
use crate::rng;
use crate::scenario::{prepare, Dataset, NormStats, Panel, Split};

/// A model variant or one of the non-neural baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Model(Variant),
    MovingAverage,
    Persistence,
    LinearRegression,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Model(v) => v.tag(),
            Method::MovingAverage => "baseline:ma",
            Method::Persistence => "baseline:persistence",
            Method::LinearRegression => "baseline:lr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline:ma" => Ok(Method::MovingAverage),
            "baseline:persistence" => Ok(Method::Persistence),
            "baseline:lr" => Ok(Method::LinearRegression),
            other => other.parse().map(Method::Model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub batch_size: usize,
    /// History length `T`.
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub memory_slots: usize,
    pub memory_dim: usize,
    pub seed: u64,
    pub variant: String,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub dropout: f64,
    /// Cap on optimizer steps per epoch; 0 means a full pass.
    pub max_batches: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            batch_size: 16,
            window: 7,
            epochs: 100,
            lr: 1e-4,
            memory_slots: 12,
            memory_dim: 64,
            seed: 0,
            variant: "full".into(),
            clip_norm: 5.0,
            dropout: 0.1,
            max_batches: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn method(&self) -> Result<Method> {
        self.variant.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.method()?;
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("train.window must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr {} must be positive", self.lr)));
        }
        if self.memory_slots == 0 || self.memory_dim == 0 {
            return Err(Error::Config("train.memory_slots and train.memory_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("train.dropout {} outside [0, 1)", self.dropout)));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("train.clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, variant: Variant, data: &TrainingData) -> ModelConfig {
        let mut m = ModelConfig::new(variant, data.dataset.feat_dim);
        m.road_dim = data.embedding.dim();
        m.window = self.window;
        m.memory_slots = self.memory_slots;
        m.memory_dim = self.memory_dim;
        m.lstm_dropout = self.dropout;
        m.head_dropout = self.dropout;
        m
    }
}

/// Everything the experiments need from one panel.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub dataset: Dataset,
    pub stats: NormStats,
    pub embedding: DistrictEmbedding,
    pub courier_graph: CourierGraph,
    pub adjacency: NormalizedAdjacency,
}

impl TrainingData {
    /// Normalizes the panel, embeds its road districts and builds the
    /// courier correlation graph from the calibration window.
    pub fn build(panel: &Panel, walk: &WalkConfig) -> Result<Self> {
        let district = build_district_graph(&panel.roads, &panel.centroids)?;
        let embedding = embed(&district.walk_graph(), walk)?.embedding;
        Self::with_embedding(panel, embedding)
    }

    pub fn with_embedding(panel: &Panel, embedding: DistrictEmbedding) -> Result<Self> {
        let (dataset, stats) = prepare(panel)?;
        let courier_graph = build_courier_graph(&dataset.calibration_series())?;
        let adjacency = normalize_adjacency(&courier_graph);
        Ok(TrainingData {
            dataset,
            stats,
            embedding,
            courier_graph,
            adjacency,
        })
    }

    pub fn inputs(&self, cfg: &ModelConfig) -> Result<ModelInputs> {
        ModelInputs::new(cfg, &self.dataset, &self.embedding, &self.adjacency)
    }

    /// Label positions of a split that have a full history window.
    pub fn samples(&self, split: Split, window: usize) -> Vec<(usize, usize)> {
        self.dataset.samples(split).into_iter().filter(|&(_, d)| d >= window).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub mae: f64,
    pub mse: f64,
    pub n: usize,
}

/// MAE and MSE of paired labels and predictions.
pub fn metrics(labels: &[f64], preds: &[f64]) -> Result<SplitMetrics> {
    if labels.is_empty() {
        return Err(Error::Data("cannot score an empty split".into()));
    }
    if labels.len() != preds.len() {
        return Err(Error::shape("metrics", &[labels.len()], &[preds.len()]));
    }
    let n = labels.len() as f64;
    let mae = labels.iter().zip(preds).map(|(y, p)| (y - p).abs()).sum::<f64>() / n;
    let mse = labels.iter().zip(preds).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n;
    Ok(SplitMetrics {
        mae,
        mse,
        n: labels.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation MAE after each epoch.
    pub val_curve: Vec<f64>,
    /// Epoch (1-based) of the retained checkpoint; 0 for untrained methods.
    pub best_epoch: usize,
    pub runtime_secs: f64,
}

/// Scores a model on a split in eval mode.
pub fn evaluate(model: &DeepSta, inputs: &ModelInputs, samples: &[(usize, usize)]) -> Result<SplitMetrics> {
    let preds = model.predict(inputs, samples)?;
    let labels: Vec<f64> = samples.iter().map(|&(i, d)| inputs.label(i, d)).collect();
    metrics(&labels, &preds)
}

pub struct Trained {
    pub model: DeepSta,
    pub report: MetricsReport,
}

/// Numeric failures mid-training mean the run blew up.
fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(detail) => Error::Diverged { epoch, detail },
        other => other,
    }
}

/// Trains one model variant and reports metrics from the checkpoint with
/// the best validation MAE.
pub fn train(cfg: &ExperimentConfig, data: &TrainingData) -> Result<Trained> {
    cfg.validate()?;
    let variant = match cfg.method()? {
        Method::Model(v) => v,
        other => return Err(Error::Config(format!("{other} is not a trainable model"))),
    };
    let start = Instant::now();
    let mcfg = cfg.model_config(variant, data);
    let inputs = data.inputs(&mcfg)?;
    let train_samples = data.samples(Split::Train, cfg.window);
    let val_samples = data.samples(Split::Val, cfg.window);
    let test_samples = data.samples(Split::Test, cfg.window);
    if train_samples.is_empty() || val_samples.is_empty() || test_samples.is_empty() {
        return Err(Error::Data(format!("a split has no day with {} days of history", cfg.window)));
    }
    let prior = train_samples.iter().map(|&(i, d)| inputs.label(i, d)).sum::<f64>() / train_samples.len() as f64;
    let mut model = DeepSta::init(mcfg, rng::derive_seed(cfg.seed, &[1]), prior)?;
    let mut state = AdamState::new(&model.params);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let mut order = train_samples.clone();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, model.params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[2, epoch as u64]));
        let mut dropout_rng = rng::stream(cfg.seed, &[3, epoch as u64]);
        let batches = order.chunks(cfg.batch_size);
        let n_batches = if cfg.max_batches == 0 {
            batches.len()
        } else {
            batches.len().min(cfg.max_batches)
        };
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size).take(n_batches) {
            let (loss, mut grads) =
                model.loss_and_grads(&inputs, batch, true, &mut dropout_rng).map_err(|e| diverged(epoch, e))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss {loss}"),
                });
            }
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            adam_step(&mut model.params, &grads, &mut state, &adam).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            total += loss;
        }
        loss_curve.push(total / n_batches as f64);
        let val = evaluate(&model, &inputs, &val_samples).map_err(|e| diverged(epoch, e))?;
        if !val.mae.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite validation error".into(),
            });
        }
        log::debug!("{} seed {} epoch {epoch}: loss {:.6} val mae {:.5}", variant, cfg.seed, total / n_batches as f64, val.mae);
        val_curve.push(val.mae);
        if val.mae < best.0 {
            best = (val.mae, epoch, model.params.clone());
        }
    }
    if cfg.epochs > 0 {
        model.params = best.2;
    }
    let report = MetricsReport {
        method: variant.tag().into(),
        seed: cfg.seed,
        train: evaluate(&model, &inputs, &train_samples)?,
        val: evaluate(&model, &inputs, &val_samples)?,
        test: evaluate(&model, &inputs, &test_samples)?,
        loss_curve,
        val_curve,
        best_epoch: best.1,
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    Ok(Trained { model, report })
}

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    linear_regression, metrics, moving_average, persistence, train, ExperimentConfig, Method, MetricsReport,
    SplitMetrics, Trained, TrainingData,
};
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::scenario::Split;

fn score(data: &TrainingData, samples: &[(usize, usize)], preds: &[f64]) -> Result<SplitMetrics> {
    let labels: Vec<f64> = samples.iter().map(|&(i, d)| data.dataset.y(i, d)).collect();
    metrics(&labels, preds)
}

/// Runs one configuration: trains a model variant or fits a baseline.
pub fn run_method(cfg: &ExperimentConfig, data: &TrainingData) -> Result<MetricsReport> {
    cfg.validate()?;
    let method = cfg.method()?;
    if let Method::Model(_) = method {
        return Ok(train(cfg, data)?.report);
    }
    let start = Instant::now();
    let t = cfg.window;
    let splits = [Split::Train, Split::Val, Split::Test].map(|s| data.samples(s, t));
    let ds = &data.dataset;
    let lr = match method {
        Method::LinearRegression => Some(linear_regression(ds, &splits[0], t)?),
        _ => None,
    };
    let predict = |s: &[(usize, usize)]| -> Result<Vec<f64>> {
        match method {
            Method::MovingAverage => moving_average(ds, s, t),
            Method::Persistence => persistence(ds, s),
            _ => Ok(lr.as_ref().expect("fitted").predict(ds, s)),
        }
    };
    let [tr, va, te] = &splits;
    Ok(MetricsReport {
        method: method.tag().into(),
        seed: cfg.seed,
        train: score(data, tr, &predict(tr)?)?,
        val: score(data, va, &predict(va)?)?,
        test: score(data, te, &predict(te)?)?,
        loss_curve: Vec::new(),
        val_curve: Vec::new(),
        best_epoch: 0,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

fn par_map<T: Send>(
    units: Vec<ExperimentConfig>,
    jobs: usize,
    f: impl Fn(&ExperimentConfig) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| units.par_iter().map(&f).collect());
    results.into_iter().collect()
}

fn run_units(units: Vec<ExperimentConfig>, data: &TrainingData, jobs: usize) -> Result<Vec<MetricsReport>> {
    par_map(units, jobs, |c| run_method(c, data))
}

fn with_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<ExperimentConfig> {
    seeds
        .iter()
        .map(|&s| ExperimentConfig {
            seed: s,
            ..cfg.clone()
        })
        .collect()
}

/// One report per seed, in seed order.
pub fn run_seeds(cfg: &ExperimentConfig, data: &TrainingData, seeds: &[u64], jobs: usize) -> Result<Vec<MetricsReport>> {
    run_units(with_seeds(cfg, seeds), data, jobs)
}

/// Like [`run_seeds`] but keeps the trained models.
pub fn train_seeds(cfg: &ExperimentConfig, data: &TrainingData, seeds: &[u64], jobs: usize) -> Result<Vec<Trained>> {
    par_map(with_seeds(cfg, seeds), jobs, |c| train(c, data))
}

/// Mean test MAE and MSE.
pub fn mean_metrics(reports: &[MetricsReport]) -> (f64, f64) {
    let n = reports.len().max(1) as f64;
    (
        reports.iter().map(|r| r.test.mae).sum::<f64>() / n,
        reports.iter().map(|r| r.test.mse).sum::<f64>() / n,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub reports: Vec<MetricsReport>,
}

/// The full model and its six ablations, each over every seed.
pub fn run_ablations(
    cfg: &ExperimentConfig,
    data: &TrainingData,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    let variants: Vec<Variant> = std::iter::once(Variant::Full).chain(Variant::ABLATIONS).collect();
    let units: Vec<ExperimentConfig> = variants
        .iter()
        .flat_map(|v| {
            with_seeds(
                &ExperimentConfig {
                    variant: v.tag().into(),
                    ..cfg.clone()
                },
                seeds,
            )
        })
        .collect();
    let mut reports = run_units(units, data, jobs)?.into_iter();
    Ok(variants
        .into_iter()
        .map(|variant| AblationRow {
            variant,
            reports: reports.by_ref().take(seeds.len()).collect(),
        })
        .collect())
}

/// Per-seed rows followed by a `mean` row for each variant.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,seed,test_mae,test_mse,val_mae,val_mse\n");
    for row in rows {
        for r in &row.reports {
            writeln!(s, "{},{},{},{},{},{}", row.variant, r.seed, r.test.mae, r.test.mse, r.val.mae, r.val.mse).unwrap();
        }
        let (mae, mse) = mean_metrics(&row.reports);
        let n = row.reports.len().max(1) as f64;
        let vmae = row.reports.iter().map(|r| r.val.mae).sum::<f64>() / n;
        let vmse = row.reports.iter().map(|r| r.val.mse).sum::<f64>() / n;
        writeln!(s, "{},mean,{mae},{mse},{vmae},{vmse}", row.variant).unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// History length, 1..=10.
    Window,
    /// Memory slots, 8..=18.
    MemorySlots,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Window => "T",
            SweepParam::MemorySlots => "L_m",
        }
    }

    pub fn values(self) -> std::ops::RangeInclusive<usize> {
        match self {
            SweepParam::Window => 1..=10,
            SweepParam::MemorySlots => 8..=18,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "window" => Ok(SweepParam::Window),
            "L_m" | "Lm" | "memory_slots" => Ok(SweepParam::MemorySlots),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}; expected T or L_m"))),
        }
    }
}

/// The base configuration with only the swept field changed.
pub fn sweep_configs(param: SweepParam, base: &ExperimentConfig) -> Vec<(usize, ExperimentConfig)> {
    param
        .values()
        .map(|v| {
            let mut c = base.clone();
            match param {
                SweepParam::Window => c.window = v,
                SweepParam::MemorySlots => c.memory_slots = v,
            }
            (v, c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub config: ExperimentConfig,
    pub reports: Vec<MetricsReport>,
}

pub fn sweep(
    param: SweepParam,
    base: &ExperimentConfig,
    data: &TrainingData,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    let configs = sweep_configs(param, base);
    let units = configs.iter().flat_map(|(_, c)| with_seeds(c, seeds)).collect();
    let mut reports = run_units(units, data, jobs)?.into_iter();
    Ok(configs
        .into_iter()
        .map(|(value, config)| SweepPoint {
            value,
            config,
            reports: reports.by_ref().take(seeds.len()).collect(),
        })
        .collect())
}

/// One row per sweep point with seed-averaged metrics.
pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut s = String::from("param,value,seeds,test_mae,test_mse,val_mae,val_mse\n");
    for p in points {
        let (mae, mse) = mean_metrics(&p.reports);
        let n = p.reports.len().max(1) as f64;
        let vmae = p.reports.iter().map(|r| r.val.mae).sum::<f64>() / n;
        let vmse = p.reports.iter().map(|r| r.val.mse).sum::<f64>() / n;
        writeln!(s, "{},{},{},{mae},{mse},{vmae},{vmse}", param.name(), p.value, p.reports.len()).unwrap();
    }
    s
}

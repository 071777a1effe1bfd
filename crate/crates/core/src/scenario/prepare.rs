use serde::{Deserialize, Serialize};

use super::{ColumnKind, Panel, Split, Splits, ANOMALY_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub kind: String,
    pub mean: f64,
    pub std: f64,
    /// Constant over the training split; encoded as zeros everywhere.
    pub zero_variance: bool,
}

/// Normalization parameters, fit on training-split rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub fit_days: (usize, usize),
    pub columns: Vec<ColumnStats>,
    pub anomaly: Vec<ColumnStats>,
    pub warnings: Vec<String>,
}

/// Encoded, normalized panel ready for models and baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_couriers: usize,
    pub n_days: usize,
    pub n_districts: usize,
    pub feat_dim: usize,
    pub splits: Splits,
    c: Vec<f64>,
    p: Vec<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    fn idx(&self, courier: usize, day: usize) -> usize {
        day * self.n_couriers + courier
    }

    /// Encoded logistics/weather/date features.
    pub fn c(&self, courier: usize, day: usize) -> &[f64] {
        let k = self.idx(courier, day);
        &self.c[k * self.feat_dim..(k + 1) * self.feat_dim]
    }

    pub fn p(&self, courier: usize, day: usize) -> &[f64] {
        let k = self.idx(courier, day);
        &self.p[k * self.n_districts..(k + 1) * self.n_districts]
    }

    /// Normalized anomaly factors.
    pub fn a(&self, courier: usize, day: usize) -> &[f64] {
        let k = self.idx(courier, day);
        &self.a[k * ANOMALY_DIM..(k + 1) * ANOMALY_DIM]
    }

    pub fn y(&self, courier: usize, day: usize) -> f64 {
        self.y[self.idx(courier, day)]
    }

    /// All `(courier, day)` label positions of a split, day-major.
    pub fn samples(&self, split: Split) -> Vec<(usize, usize)> {
        self.splits
            .days(split)
            .flat_map(|d| (0..self.n_couriers).map(move |i| (i, d)))
            .collect()
    }

    /// Each courier's label series over the calibration window.
    pub fn calibration_series(&self) -> Vec<Vec<f64>> {
        (0..self.n_couriers)
            .map(|i| (0..self.splits.calibration_end).map(|d| self.y(i, d)).collect())
            .collect()
    }

    /// Relabels couriers: courier `i` of the result is courier `perm[i]`
    /// here.
    pub fn permute_couriers(&self, perm: &[usize]) -> Result<Dataset> {
        let n = self.n_couriers;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::Data(format!("not a permutation of {n} couriers: {perm:?}")));
        }
        let mut out = self.clone();
        for d in 0..self.n_days {
            for (i, &j) in perm.iter().enumerate() {
                let (to, from) = (self.idx(i, d), self.idx(j, d));
                out.c[to * self.feat_dim..(to + 1) * self.feat_dim].copy_from_slice(self.c(j, d));
                out.p[to * self.n_districts..(to + 1) * self.n_districts].copy_from_slice(self.p(j, d));
                out.a[to * ANOMALY_DIM..(to + 1) * ANOMALY_DIM].copy_from_slice(self.a(j, d));
                out.y[to] = self.y[from];
            }
        }
        Ok(out)
    }

    /// Overwrites the label at one position; used to build synthetic targets.
    pub fn set_y(&mut self, courier: usize, day: usize, value: f64) {
        let k = self.idx(courier, day);
        self.y[k] = value;
    }
}

fn fit(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn stats(name: String, kind: &str, (mean, std): (f64, f64), warnings: &mut Vec<String>) -> ColumnStats {
    let zero_variance = !(std > 1e-12);
    if zero_variance && kind == "numeric" {
        let msg = format!("column {name} is constant over the training split; encoded as zeros");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    ColumnStats {
        name,
        kind: kind.into(),
        mean,
        std,
        zero_variance,
    }
}

fn zscore(v: f64, s: &ColumnStats) -> f64 {
    if s.zero_variance {
        0.0
    } else {
        (v - s.mean) / s.std
    }
}

/// Encodes categorical columns one-hot and z-scores numeric columns and
/// anomaly factors with statistics from the training split.
pub fn prepare(panel: &Panel) -> Result<(Dataset, NormStats)> {
    panel.validate()?;
    let splits = panel.splits;
    splits.check_non_empty()?;
    let (n, days, m) = (panel.n_couriers, panel.n_days, panel.n_districts);
    let train_rows = || splits.train().flat_map(move |d| (0..n).map(move |i| panel.row(i, d)));

    let mut warnings = Vec::new();
    let mut columns = Vec::new();
    for (k, col) in panel.schema.columns.iter().enumerate() {
        let kind = match col.kind {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Binary => "binary",
            ColumnKind::Categorical { .. } => "categorical",
        };
        columns.push(stats(col.name.clone(), kind, fit(train_rows().map(|r| r.c[k])), &mut warnings));
    }
    let anomaly: Vec<ColumnStats> = (0..ANOMALY_DIM)
        .map(|k| stats(format!("a_{k}"), "numeric", fit(train_rows().map(|r| r.a[k])), &mut warnings))
        .collect();

    let feat_dim = panel.schema.encoded_width();
    let mut c = Vec::with_capacity(n * days * feat_dim);
    let mut p = Vec::with_capacity(n * days * m);
    let mut a = Vec::with_capacity(n * days * ANOMALY_DIM);
    let mut y = Vec::with_capacity(n * days);
    for row in &panel.rows {
        for ((col, st), &v) in panel.schema.columns.iter().zip(&columns).zip(&row.c) {
            match col.kind {
                ColumnKind::Numeric => c.push(zscore(v, st)),
                ColumnKind::Binary => c.push(v),
                ColumnKind::Categorical { levels } => {
                    let level = v as usize;
                    if v < 0.0 || v.fract() != 0.0 || level >= levels {
                        return Err(Error::Data(format!(
                            "courier {}, day {}: {} level {v} outside 0..{levels}",
                            row.courier, row.day, col.name
                        )));
                    }
                    c.extend((0..levels).map(|l| if l == level { 1.0 } else { 0.0 }));
                }
            }
        }
        p.extend_from_slice(&row.p);
        a.extend(row.a.iter().zip(&anomaly).map(|(v, s)| zscore(*v, s)));
        y.push(row.y);
    }

    let ds = Dataset {
        n_couriers: n,
        n_days: days,
        n_districts: m,
        feat_dim,
        splits,
        c,
        p,
        a,
        y,
    };
    let stats = NormStats {
        fit_days: (splits.train().start, splits.train().end),
        columns,
        anomaly,
        warnings,
    };
    Ok((ds, stats))
}

/// Per-courier inputs for days `t - history ..= t` and the labels at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub t: usize,
    pub days: Vec<usize>,
    /// `c[courier][step]`, oldest step first.
    pub c: Vec<Vec<Vec<f64>>>,
    pub p: Vec<Vec<Vec<f64>>>,
    pub a: Vec<Vec<Vec<f64>>>,
    pub y: Vec<f64>,
}

pub fn window(ds: &Dataset, t: usize, history: usize) -> Result<WindowBatch> {
    if t >= ds.n_days {
        return Err(Error::Window(format!("day {t} beyond panel of {} days", ds.n_days)));
    }
    if t < history {
        return Err(Error::Window(format!("day {t} has fewer than {history} days of history")));
    }
    let days: Vec<usize> = (t - history..=t).collect();
    let per = |f: &dyn Fn(usize, usize) -> Vec<f64>| -> Vec<Vec<Vec<f64>>> {
        (0..ds.n_couriers)
            .map(|i| days.iter().map(|&d| f(i, d)).collect())
            .collect()
    };
    Ok(WindowBatch {
        t,
        c: per(&|i, d| ds.c(i, d).to_vec()),
        p: per(&|i, d| ds.p(i, d).to_vec()),
        a: per(&|i, d| ds.a(i, d).to_vec()),
        y: (0..ds.n_couriers).map(|i| ds.y(i, t)).collect(),
        days,
    })
}

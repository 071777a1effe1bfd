//! Courier-day panels: synthetic generation, CSV exchange, normalization
//! and model windows.

mod generate;
mod io;
mod prepare;

pub use generate::{generate, generate_with_truth, GeneratedTruth};
pub use io::{
    export_panel, import_panel, CENTROIDS_FILE, PANEL_FILE, ROAD_EDGES_FILE, ROAD_NODES_FILE, SCHEMA_FILE,
};
pub use prepare::{prepare, window, ColumnStats, Dataset, NormStats, WindowBatch};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{Centroid, RoadNetwork};

/// Number of external anomaly factors per courier-day.
pub const ANOMALY_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_couriers: usize,
    pub n_districts: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Leading days used only to fit the courier correlation graph.
    pub calibration_days: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub team_size: usize,
    /// Spacing of district centres on the synthetic city grid (meters).
    pub district_spacing: f64,
    /// First day of each outbreak; empty means no epidemic at all.
    pub outbreak_days: Vec<usize>,
    /// Peak intensity per outbreak; the last value repeats if shorter.
    pub outbreak_peaks: Vec<f64>,
    pub outbreak_duration: f64,
    pub growth_rate: f64,
    pub cluster_radius: f64,
    pub lockdown_threshold: f64,
    /// Relative day-to-day noise on the intensity field.
    pub intensity_noise: f64,
    pub absence_prob: f64,
    pub reassign_top_k: usize,
    pub base_rate: f64,
    pub noise_std: f64,
    pub capacity_headroom: f64,
    pub lockdown_capacity_loss: f64,
    pub workload_penalty: f64,
    pub lockdown_penalty: f64,
    pub backlog_penalty: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_couriers: 48,
            n_districts: 24,
            n_days: 200,
            seed: 0,
            calibration_days: 30,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            team_size: 6,
            district_spacing: 1000.0,
            outbreak_days: vec![62, 112, 176],
            outbreak_peaks: vec![1.0, 1.0, 1.0],
            outbreak_duration: 20.0,
            growth_rate: 0.6,
            cluster_radius: 1500.0,
            lockdown_threshold: 0.3,
            intensity_noise: 0.1,
            absence_prob: 0.35,
            reassign_top_k: 5,
            base_rate: 0.95,
            noise_std: 0.01,
            capacity_headroom: 1.4,
            lockdown_capacity_loss: 0.5,
            workload_penalty: 0.35,
            lockdown_penalty: 0.15,
            backlog_penalty: 0.2,
        }
    }
}

impl ScenarioConfig {
    /// Small instance used for overfitting and gradient checks.
    pub fn micro() -> Self {
        ScenarioConfig {
            n_couriers: 8,
            n_districts: 3,
            n_days: 60,
            team_size: 4,
            outbreak_days: vec![38],
            outbreak_peaks: vec![1.0],
            outbreak_duration: 10.0,
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_sum = self.train_frac + self.val_frac + self.test_frac;
        if (frac_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {frac_sum}, expected 1")));
        }
        if self.n_couriers == 0 || self.n_districts == 0 {
            return Err(Error::Config("n_couriers and n_districts must be positive".into()));
        }
        if self.team_size == 0 {
            return Err(Error::Config("team_size must be positive".into()));
        }
        if self.calibration_days < 3 {
            return Err(Error::Config("calibration_days must be at least 3".into()));
        }
        if !(0.0..=1.0).contains(&self.absence_prob) {
            return Err(Error::Config("absence_prob must lie in [0, 1]".into()));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::Config("base_rate must lie in (0, 1)".into()));
        }
        if !self.outbreak_days.is_empty() && self.outbreak_peaks.is_empty() {
            return Err(Error::Config("outbreak_peaks must not be empty when outbreaks are configured".into()));
        }
        let s = Splits::new(self.n_days, self.calibration_days, self.train_frac, self.val_frac)?;
        s.check_non_empty()
    }

    pub fn splits(&self) -> Result<Splits> {
        Splits::new(self.n_days, self.calibration_days, self.train_frac, self.val_frac)
    }
}

/// Chronological day boundaries: `[0, calibration_end)` calibration,
/// `[calibration_end, train_end)` train, `[train_end, val_end)` validation,
/// `[val_end, n_days)` test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub calibration_end: usize,
    pub train_end: usize,
    pub val_end: usize,
    pub n_days: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl Splits {
    pub fn new(n_days: usize, calibration_days: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        if calibration_days >= n_days {
            return Err(Error::Config(format!(
                "calibration window ({calibration_days} days) leaves no data in {n_days} days"
            )));
        }
        let usable = n_days - calibration_days;
        let n_train = (usable as f64 * train_frac).round() as usize;
        let n_val = (usable as f64 * val_frac).round() as usize;
        let train_end = (calibration_days + n_train).min(n_days);
        let val_end = (train_end + n_val).min(n_days);
        Ok(Splits {
            calibration_end: calibration_days,
            train_end,
            val_end,
            n_days,
        })
    }

    pub fn check_non_empty(&self) -> Result<()> {
        for (name, r) in [("train", self.train()), ("val", self.val()), ("test", self.test())] {
            if r.is_empty() {
                return Err(Error::Config(format!("{name} split is empty")));
            }
        }
        Ok(())
    }

    pub fn train(&self) -> std::ops::Range<usize> {
        self.calibration_end..self.train_end
    }

    pub fn val(&self) -> std::ops::Range<usize> {
        self.train_end..self.val_end
    }

    pub fn test(&self) -> std::ops::Range<usize> {
        self.val_end..self.n_days
    }

    pub fn days(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => self.train(),
            Split::Val => self.val(),
            Split::Test => self.test(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Binary,
    Categorical { levels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Raw logistics/weather/date columns of a panel row, before encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn default_courier() -> Self {
        let num = |n: &str| Column {
            name: n.into(),
            kind: ColumnKind::Numeric,
        };
        let bin = |n: &str| Column {
            name: n.into(),
            kind: ColumnKind::Binary,
        };
        let cat = |n: &str, levels| Column {
            name: n.into(),
            kind: ColumnKind::Categorical { levels },
        };
        FeatureSchema {
            columns: vec![
                num("orders_express"),
                num("orders_standard"),
                num("orders_bulky"),
                num("prev_rate_express"),
                num("prev_rate_standard"),
                num("prev_rate_bulky"),
                num("tenure_years"),
                num("age"),
                num("backlog"),
                bin("no_orders"),
                cat("weather", 5),
                num("temp_min"),
                num("temp_max"),
                num("temp_mean"),
                cat("day_of_week", 7),
                bin("holiday"),
            ],
        }
    }

    pub fn raw_width(&self) -> usize {
        self.columns.len()
    }

    /// Width after one-hot expansion of categorical columns.
    pub fn encoded_width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Categorical { levels } => levels,
                _ => 1,
            })
            .sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub courier: usize,
    pub day: usize,
    /// Timely rate on `day`, in (0, 1).
    pub y: f64,
    /// Raw features known before `day` starts.
    pub c: Vec<f64>,
    /// Share of the courier's orders per district on the previous day;
    /// all zeros when the courier had no orders.
    pub p: Vec<f64>,
    /// City new confirmed, city new asymptomatic, home-district new
    /// confirmed (all reported the previous day), and the courier's backlog.
    pub a: [f64; ANOMALY_DIM],
}

/// All couriers over all days, rows stored day-major
/// (`rows[day * n_couriers + courier]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub n_couriers: usize,
    pub n_days: usize,
    pub n_districts: usize,
    pub schema: FeatureSchema,
    pub splits: Splits,
    pub rows: Vec<PanelRow>,
    pub centroids: Vec<Centroid>,
    pub roads: RoadNetwork,
}

impl Panel {
    pub fn row(&self, courier: usize, day: usize) -> &PanelRow {
        &self.rows[day * self.n_couriers + courier]
    }

    pub fn label(&self, courier: usize, day: usize) -> f64 {
        self.row(courier, day).y
    }

    /// Each courier's label series over the calibration window.
    pub fn calibration_series(&self) -> Vec<Vec<f64>> {
        (0..self.n_couriers)
            .map(|i| (0..self.splits.calibration_end).map(|d| self.label(i, d)).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.n_couriers * self.n_days {
            return Err(Error::Data(format!(
                "panel has {} rows, expected {}",
                self.rows.len(),
                self.n_couriers * self.n_days
            )));
        }
        for (idx, r) in self.rows.iter().enumerate() {
            let (day, courier) = (idx / self.n_couriers, idx % self.n_couriers);
            if r.day != day || r.courier != courier {
                return Err(Error::Data(format!(
                    "row order broken at courier {courier}, day {day} (found courier {}, day {})",
                    r.courier, r.day
                )));
            }
            if !(r.y > 0.0 && r.y < 1.0) {
                return Err(Error::Range(format!("label {} for courier {courier}, day {day} outside (0, 1)", r.y)));
            }
            if r.c.len() != self.schema.raw_width() || r.p.len() != self.n_districts {
                return Err(Error::Data(format!("courier {courier}, day {day}: wrong feature widths")));
            }
            let total: f64 = r.p.iter().sum();
            if r.p.iter().any(|v| *v < 0.0) || !(total == 0.0 || (total - 1.0).abs() < 1e-6) {
                return Err(Error::Range(format!(
                    "courier {courier}, day {day}: order proportions are not a simplex"
                )));
            }
        }
        Ok(())
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scenario::Dataset;

/// Mean of the `window` labels before each sample day.
pub fn moving_average(ds: &Dataset, samples: &[(usize, usize)], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving average needs a window of at least 1".into()));
    }
    samples
        .iter()
        .map(|&(i, d)| {
            if d < window {
                return Err(Error::Window(format!("courier {i}, day {d}: fewer than {window} previous labels")));
            }
            Ok((d - window..d).map(|k| ds.y(i, k)).sum::<f64>() / window as f64)
        })
        .collect()
}

/// Previous day's label.
pub fn persistence(ds: &Dataset, samples: &[(usize, usize)]) -> Result<Vec<f64>> {
    moving_average(ds, samples, 1)
}

/// Flattened window of one sample: features and anomaly factors for days
/// `d - window ..= d`, the labels of the `window` previous days, and a
/// constant 1.
pub fn window_features(ds: &Dataset, courier: usize, day: usize, window: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity((window + 1) * (ds.feat_dim + 4) + window + 1);
    for k in day - window..=day {
        f.extend_from_slice(ds.c(courier, k));
        f.extend_from_slice(ds.a(courier, k));
    }
    f.extend((day - window..day).map(|k| ds.y(courier, k)));
    f.push(1.0);
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub window: usize,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, ds: &Dataset, samples: &[(usize, usize)]) -> Vec<f64> {
        samples
            .iter()
            .map(|&(i, d)| {
                window_features(ds, i, d, self.window)
                    .iter()
                    .zip(&self.coef)
                    .map(|(x, w)| x * w)
                    .sum()
            })
            .collect()
    }
}

/// Minimum-norm least squares over the flattened window features.
pub fn linear_regression(ds: &Dataset, train: &[(usize, usize)], window: usize) -> Result<LinearModel> {
    if train.is_empty() {
        return Err(Error::Data("no training samples for linear regression".into()));
    }
    let rows: Vec<Vec<f64>> = train.iter().map(|&(i, d)| window_features(ds, i, d, window)).collect();
    let k = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]);
    let y = DVector::from_iterator(train.len(), train.iter().map(|&(i, d)| ds.y(i, d)));
    let svd = x.svd(true, true);
    let eps = 1e-10 * svd.singular_values.max().max(1.0);
    let coef = svd.solve(&y, eps).map_err(|e| Error::Numeric(format!("least squares: {e}")))?;
    Ok(LinearModel {
        window,
        coef: coef.iter().copied().collect(),
    })
}

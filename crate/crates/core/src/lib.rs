//! Delivery timely-rate forecasting for couriers under anomaly conditions.
//!
//! The pipeline: a road-district graph is embedded with biased random walks
//! and skip-gram ([`node2vec`]); each courier's day is summarised as an
//! order-weighted mix of district embeddings plus logistics features, mixed
//! across correlated couriers with a GCN, encoded over time with an LSTM,
//! and combined with a recurrent encoding of external anomaly factors and a
//! trainable attention memory ([`model`]). [`scenario`] produces synthetic
//! courier panels and [`training`] runs fitting, baselines, ablations and
//! sweeps.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod graphs;
pub mod hashing;
pub mod model;
pub mod node2vec;
pub mod rng;
pub mod scenario;
pub mod training;

pub use autodiff::{ParamStore, Tape, Tensor, Var};
pub use error::{Error, Result};

//! Assistive teleoperation controllers that regress their own action
//! quantiles, calibrated online with adaptive conformalized quantile
//! regression and monitored through a scalar uncertainty score.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what datasets, model files and the
//! experiment pipeline use.

pub mod conformal;
pub mod envs;
pub mod error;
pub mod eval;
pub mod netcore;
pub mod regressor;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp = netcore::Mlp<f64>;
pub type QuantilePrediction = netcore::QuantilePrediction<f64>;
pub type TrainConfig = netcore::TrainConfig<f64>;
pub type QuantileModel = regressor::QuantileModel<f64>;
pub type EnsembleModel = regressor::EnsembleModel<f64>;
pub type AcqrState = conformal::AcqrState<f64>;
pub type PredictionInterval = conformal::PredictionInterval<f64>;
pub type MonitorConfig = conformal::MonitorConfig<f64>;

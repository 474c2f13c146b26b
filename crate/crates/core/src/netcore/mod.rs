//! Minimal dense numeric kernel: the fixed feed-forward layout, reverse-mode
//! gradients, losses and an SGD loop.

mod io;
mod loss;
mod mlp;
mod train;

pub use io::{LayerRecord, ModelFile, ModelMeta};
pub use loss::{
    pinball, pinball_grad, quantile_levels, quantile_loss, LossParts, Objective, QuantileObjective,
    QuantilePrediction,
};
pub use mlp::{Activation, ForwardCache, Gradient, Layer, Mlp, BOTTLENECK_WIDTH, DEFAULT_HIDDEN};
pub use train::{grad, quantile_grad, train, train_quantile, Sample, TrainConfig};

use crate::error::Result;
use crate::scalar::Scalar;

/// Evaluates a quantile network and splits its output into the three heads.
/// No ordering between the heads is enforced.
pub fn forward<T: Scalar>(model: &Mlp<T>, input: &[T]) -> Result<QuantilePrediction<T>> {
    QuantilePrediction::from_output(&model.forward(input)?)
}

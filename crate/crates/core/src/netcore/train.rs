//! Mini-batch SGD with a seeded shuffle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::loss::{Objective, QuantileObjective};
use super::mlp::{Gradient, Mlp};
use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Keeps the shuffle stream distinct from the weight-init stream for equal seeds.
const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Miscoverage target; fixes the quantile heads at `alpha/2` and `1 - alpha/2`.
    pub alpha: T,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            learning_rate: T::lit(0.01),
            epochs: 200,
            batch_size: 32,
            seed: 0,
            alpha: T::lit(0.1),
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One supervised example: network input and regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
}

impl<T> Sample<T> {
    pub fn new(input: Vec<T>, target: Vec<T>) -> Self {
        Sample { input, target }
    }
}

/// Gradient of the mean per-sample loss over `batch`, together with that mean.
pub fn grad<T: Scalar, O: Objective<T>>(
    model: &Mlp<T>,
    batch: &[&Sample<T>],
    objective: &O,
) -> Result<(T, Gradient<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = Gradient::zeros_like(model);
    let mut grad_out = vec![T::zero(); model.output_dim()];
    let mut loss = T::zero();
    for sample in batch {
        check_len(
            "target width",
            model.output_dim(),
            objective.output_width(sample.target.len()),
        )?;
        let cache = model.forward_cached(&sample.input)?;
        loss = loss + objective.loss_and_grad(cache.output(), &sample.target, &mut grad_out);
        model.backward(&cache, &grad_out, &mut total);
    }
    let inv = T::one() / T::from_usize(batch.len()).expect("batch size fits the scalar type");
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Quantile-objective convenience over [`grad`].
pub fn quantile_grad<T: Scalar>(
    model: &Mlp<T>,
    batch: &[&Sample<T>],
    tau_lo: T,
    tau_hi: T,
) -> Result<(T, Gradient<T>)> {
    grad(model, batch, &QuantileObjective { tau_lo, tau_hi })
}

/// Trains with plain SGD. The data order is reshuffled every epoch from a
/// stream seeded by `config.seed`; the returned curve holds one mean
/// mini-batch loss per epoch.
pub fn train<T: Scalar, O: Objective<T>>(
    mut model: Mlp<T>,
    data: &[Sample<T>],
    config: &TrainConfig<T>,
    objective: &O,
) -> Result<(Mlp<T>, Vec<T>)> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, g) = grad(&model, &batch, objective)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            model.apply_gradient(&g, config.learning_rate);
            epoch_loss = epoch_loss + loss;
            batches += 1;
        }
        let mean = epoch_loss / T::from_usize(batches).expect("batch count fits the scalar type");
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        curve.push(mean);
    }
    Ok((model, curve))
}

/// Trains the `[mean | lower | upper]` heads at the levels implied by `config.alpha`.
pub fn train_quantile<T: Scalar>(
    model: Mlp<T>,
    data: &[Sample<T>],
    config: &TrainConfig<T>,
) -> Result<(Mlp<T>, Vec<T>)> {
    let objective = QuantileObjective::from_alpha(config.alpha)?;
    train(model, data, config, &objective)
}

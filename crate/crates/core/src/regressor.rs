//! Assistive controllers built on the numeric kernel: the quantile
//! teleoperation controller and the deep-ensemble baseline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionInterval;
use crate::error::{check_len, Error, Result};
use crate::netcore::{
    self, train, train_quantile, Mlp, ModelFile, ModelMeta, Objective, QuantilePrediction, Sample,
    TrainConfig,
};
use crate::scalar::Scalar;

/// Number of ensemble members.
pub const ENSEMBLE_SIZE: usize = 5;

const LOG_VAR_BOUND: f64 = 10.0;

/// One calibration or training sample: state, low-DoF input and the desired
/// high-DoF action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTriple<T = f64> {
    pub state: Vec<T>,
    pub low_input: Vec<T>,
    pub action: Vec<T>,
}

/// Declared `(n_s, n_u, n_a)` of a controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_s: usize,
    pub n_u: usize,
    pub n_a: usize,
}

impl Dims {
    pub fn input(&self) -> usize {
        self.n_s + self.n_u
    }

    pub fn check<T: Scalar>(&self, triple: &LabeledTriple<T>) -> Result<()> {
        check_len("state", self.n_s, triple.state.len())?;
        check_len("low-DoF input", self.n_u, triple.low_input.len())?;
        check_len("action", self.n_a, triple.action.len())?;
        let finite = triple
            .state
            .iter()
            .chain(&triple.low_input)
            .chain(&triple.action)
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("labeled triple"))
        }
    }
}

/// Shared feature map: `[state | low_input]` scaled per feature.
#[derive(Debug, Clone, PartialEq)]
struct Features<T> {
    dims: Dims,
    scale: Vec<T>,
}

impl<T: Scalar> Features<T> {
    fn new(dims: Dims, scale: Option<Vec<T>>) -> Result<Self> {
        let scale = scale.unwrap_or_else(|| vec![T::one(); dims.input()]);
        check_len("input scale", dims.input(), scale.len())?;
        Ok(Features { dims, scale })
    }

    fn encode(&self, state: &[T], low_input: &[T]) -> Result<Vec<T>> {
        check_len("state", self.dims.n_s, state.len())?;
        check_len("low-DoF input", self.dims.n_u, low_input.len())?;
        Ok(state
            .iter()
            .chain(low_input)
            .zip(&self.scale)
            .map(|(x, s)| *x * *s)
            .collect())
    }

    fn samples(&self, data: &[LabeledTriple<T>]) -> Result<Vec<Sample<T>>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        data.iter()
            .map(|t| {
                self.dims.check(t)?;
                Ok(Sample::new(self.encode(&t.state, &t.low_input)?, t.action.clone()))
            })
            .collect()
    }

    fn scale_f64(&self) -> Vec<f64> {
        self.scale.iter().map(|s| s.to_f64_lossy()).collect()
    }
}

/// Quantile teleoperation controller: `(state, h) -> (â, q_lo, q_hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel<T> {
    net: Mlp<T>,
    features: Features<T>,
    seed: u64,
    alpha: T,
    env: Option<String>,
}

impl<T: Scalar> QuantileModel<T> {
    pub fn new(net: Mlp<T>, dims: Dims, input_scale: Option<Vec<T>>, alpha: T, seed: u64) -> Result<Self> {
        check_len("network input", dims.input(), net.input_dim())?;
        check_len("quantile output", 3 * dims.n_a, net.output_dim())?;
        Ok(QuantileModel {
            net,
            features: Features::new(dims, input_scale)?,
            seed,
            alpha,
            env: None,
        })
    }

    /// Initializes the default architecture and trains it on `data`.
    pub fn train(
        data: &[LabeledTriple<T>],
        dims: Dims,
        input_scale: Option<Vec<T>>,
        config: &TrainConfig<T>,
    ) -> Result<(Self, Vec<T>)> {
        let layer_dims = Mlp::<T>::default_dims(dims.input(), 3 * dims.n_a);
        Self::train_with_layout(data, dims, input_scale, &layer_dims, config)
    }

    pub fn train_with_layout(
        data: &[LabeledTriple<T>],
        dims: Dims,
        input_scale: Option<Vec<T>>,
        layer_dims: &[usize],
        config: &TrainConfig<T>,
    ) -> Result<(Self, Vec<T>)> {
        config.validate()?;
        let features = Features::new(dims, input_scale)?;
        let samples = features.samples(data)?;
        let init = Mlp::init(layer_dims, config.seed)?;
        let mut model = QuantileModel::new(init, dims, Some(features.scale), config.alpha, config.seed)?;
        let (net, curve) = train_quantile(model.net, &samples, config)?;
        model.net = net;
        Ok((model, curve))
    }

    pub fn with_env(mut self, env: impl Into<String>) -> Self {
        self.env = Some(env.into());
        self
    }

    pub fn env(&self) -> Option<&str> {
        self.env.as_deref()
    }

    pub fn dims(&self) -> Dims {
        self.features.dims
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn predict(&self, state: &[T], low_input: &[T]) -> Result<QuantilePrediction<T>> {
        netcore::forward(&self.net, &self.features.encode(state, low_input)?)
    }

    pub fn to_file(&self) -> ModelFile {
        let dims = self.dims();
        ModelFile::from_mlp(
            &self.net,
            ModelMeta {
                kind: "qr".into(),
                layer_dims: self.net.layer_dims().to_vec(),
                n_a: dims.n_a,
                n_s: Some(dims.n_s),
                n_u: Some(dims.n_u),
                seed: self.seed,
                alpha: self.alpha.to_f64_lossy(),
                input_scale: Some(self.features.scale_f64()),
                env: self.env.clone(),
            },
        )
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind("qr")?;
        let (dims, scale) = dims_from_meta(&file.meta)?;
        let net = file.to_mlp()?;
        let mut model = QuantileModel::new(
            net,
            dims,
            Some(scale),
            T::from_f64_lossy(file.meta.alpha),
            file.meta.seed,
        )?;
        model.env = file.meta.env.clone();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&ModelFile::load(path)?)
    }
}

fn dims_from_meta<T: Scalar>(meta: &ModelMeta) -> Result<(Dims, Vec<T>)> {
    let n_in = *meta
        .layer_dims
        .first()
        .ok_or_else(|| Error::Format("empty layer_dims".into()))?;
    let n_s = meta.n_s.unwrap_or(n_in);
    let n_u = meta.n_u.unwrap_or(n_in.saturating_sub(n_s));
    let dims = Dims { n_s, n_u, n_a: meta.n_a };
    check_len("model input width", dims.input(), n_in)?;
    let scale = meta
        .input_scale
        .clone()
        .unwrap_or_else(|| vec![1.0; n_in])
        .into_iter()
        .map(T::from_f64_lossy)
        .collect();
    Ok((dims, scale))
}

/// Gaussian negative log-likelihood over `[mean | log_variance]` heads:
/// `0.5 (log σ² + (y − μ)² / σ²)` summed over dimensions, with the log
/// variance clamped to `[−10, 10]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianNll;

impl<T: Scalar> Objective<T> for GaussianNll {
    fn output_width(&self, n_a: usize) -> usize {
        2 * n_a
    }

    fn loss_and_grad(&self, output: &[T], target: &[T], grad_out: &mut [T]) -> T {
        let n = target.len();
        let bound = T::lit(LOG_VAR_BOUND);
        let half = T::lit(0.5);
        let mut loss = T::zero();
        for d in 0..n {
            let mu = output[d];
            let raw = output[n + d];
            let log_var = raw.max(-bound).min(bound);
            let inv_var = (-log_var).exp();
            let r = target[d] - mu;
            loss = loss + half * (log_var + r * r * inv_var);
            grad_out[d] = -r * inv_var;
            grad_out[n + d] = if raw < -bound || raw > bound {
                T::zero()
            } else {
                half * (T::one() - r * r * inv_var)
            };
        }
        loss
    }
}

/// Five mean/variance networks trained from different seeds and data orders.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel<T> {
    members: Vec<Mlp<T>>,
    features: Features<T>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EnsembleManifest {
    kind: String,
    seed: u64,
    members: Vec<String>,
}

impl<T: Scalar> EnsembleModel<T> {
    pub fn from_members(members: Vec<Mlp<T>>, dims: Dims, input_scale: Option<Vec<T>>, seed: u64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Architecture("ensemble needs at least one member".into()));
        }
        for m in &members {
            check_len("member input", dims.input(), m.input_dim())?;
            check_len("member output", 2 * dims.n_a, m.output_dim())?;
        }
        Ok(EnsembleModel {
            members,
            features: Features::new(dims, input_scale)?,
            seed,
        })
    }

    /// Trains [`ENSEMBLE_SIZE`] members; member `k` uses seed `config.seed + k`
    /// for both its initialization and its shuffle order. Members are
    /// trained on separate threads.
    pub fn train(
        data: &[LabeledTriple<T>],
        dims: Dims,
        input_scale: Option<Vec<T>>,
        config: &TrainConfig<T>,
    ) -> Result<Self> {
        config.validate()?;
        let features = Features::new(dims, input_scale)?;
        let samples = features.samples(data)?;
        let layer_dims = Mlp::<T>::default_dims(dims.input(), 2 * dims.n_a);
        let members = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..ENSEMBLE_SIZE as u64)
                .map(|k| {
                    let samples = &samples;
                    let layer_dims = &layer_dims;
                    let mut cfg = config.clone();
                    cfg.seed = config.seed.wrapping_add(k);
                    scope.spawn(move || -> Result<Mlp<T>> {
                        let init = Mlp::init(layer_dims, cfg.seed)?;
                        Ok(train(init, samples, &cfg, &GaussianNll)?.0)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ensemble member thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(EnsembleModel {
            members,
            features,
            seed: config.seed,
        })
    }

    pub fn members(&self) -> &[Mlp<T>] {
        &self.members
    }

    pub fn dims(&self) -> Dims {
        self.features.dims
    }

    /// Per-member `(mean, variance)` heads.
    pub fn member_predictions(&self, state: &[T], low_input: &[T]) -> Result<Vec<(Vec<T>, Vec<T>)>> {
        let x = self.features.encode(state, low_input)?;
        let n = self.dims().n_a;
        let bound = T::lit(LOG_VAR_BOUND);
        self.members
            .iter()
            .map(|m| {
                let out = m.forward(&x)?;
                let mean = out[..n].to_vec();
                let var = out[n..].iter().map(|lv| lv.max(-bound).min(bound).exp()).collect();
                Ok((mean, var))
            })
            .collect()
    }

    /// Moment-matched equal-weight Gaussian mixture: `(μ, σ)` per dimension.
    pub fn predict(&self, state: &[T], low_input: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        Ok(mixture_moments(&self.member_predictions(state, low_input)?))
    }

    /// `μ ± σ` of the mixture, with no conformal expansion (`λ = 1`).
    pub fn interval(&self, state: &[T], low_input: &[T]) -> Result<PredictionInterval<T>> {
        let (mu, sigma) = self.predict(state, low_input)?;
        Ok(ensemble_interval(&mu, &sigma))
    }

    fn member_file(&self, k: usize) -> ModelFile {
        let dims = self.dims();
        ModelFile::from_mlp(
            &self.members[k],
            ModelMeta {
                kind: "ensemble_member".into(),
                layer_dims: self.members[k].layer_dims().to_vec(),
                n_a: dims.n_a,
                n_s: Some(dims.n_s),
                n_u: Some(dims.n_u),
                seed: self.seed.wrapping_add(k as u64),
                alpha: 0.0,
                input_scale: Some(self.features.scale_f64()),
                env: None,
            },
        )
    }

    /// Writes `member_<k>.json` files plus `manifest.json` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for k in 0..self.members.len() {
            let name = format!("member_{k}.json");
            self.member_file(k).save(dir.join(&name))?;
            names.push(name);
        }
        let manifest = EnsembleManifest {
            kind: "ensemble".into(),
            seed: self.seed,
            members: names,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: EnsembleManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut members = Vec::new();
        let mut layout = None;
        for name in &manifest.members {
            let file = ModelFile::load(dir.join(name))?;
            file.expect_kind("ensemble_member")?;
            layout.get_or_insert_with(|| dims_from_meta::<T>(&file.meta));
            members.push(file.to_mlp()?);
        }
        let (dims, scale) = layout.ok_or_else(|| Error::Format("ensemble has no members".into()))??;
        Self::from_members(members, dims, Some(scale), manifest.seed)
    }
}

/// Mixture mean `μ = mean_k μ_k` and standard deviation from
/// `σ² = mean_k(σ_k² + μ_k²) − μ²`, floored at zero.
pub fn mixture_moments<T: Scalar>(members: &[(Vec<T>, Vec<T>)]) -> (Vec<T>, Vec<T>) {
    let n_a = members.first().map(|m| m.0.len()).unwrap_or(0);
    let inv = T::one() / T::from_usize(members.len()).expect("member count fits the scalar type");
    let mut mu = vec![T::zero(); n_a];
    let mut second = vec![T::zero(); n_a];
    for (mean, var) in members {
        for d in 0..n_a {
            mu[d] = mu[d] + mean[d] * inv;
            second[d] = second[d] + (var[d] + mean[d] * mean[d]) * inv;
        }
    }
    let sigma = (0..n_a)
        .map(|d| (second[d] - mu[d] * mu[d]).max(T::zero()).sqrt())
        .collect();
    (mu, sigma)
}

pub fn ensemble_interval<T: Scalar>(mu: &[T], sigma: &[T]) -> PredictionInterval<T> {
    PredictionInterval::new(
        mu.iter().zip(sigma).map(|(m, s)| *m - *s).collect(),
        mu.iter().zip(sigma).map(|(m, s)| *m + *s).collect(),
        T::one(),
        T::nan(),
    )
}

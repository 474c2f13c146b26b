//! Adaptive conformalized quantile regression (ACQR).
//!
//! The regressor's quantile heads give per-dimension offsets `Δ⁻`, `Δ⁺`
//! around the mean action. The nonconformity score of a labeled point is the
//! smallest factor `ρ` that stretches those offsets enough to contain the
//! label in every dimension. Online, the calibrated interval is
//! `[â − λ_t Δ⁻, â + λ_t Δ⁺]` where `λ_t` is an empirical quantile of the
//! scores seen so far at level `1 − α_t`, and `α_t` follows
//!
//! ```text
//! α_{t+1} = α_t + γ (α − err_t)
//! ```
//!
//! which keeps the long-run miscoverage at `α` regardless of how the stream
//! was generated:
//!
//! ```text
//! | (1/T) Σ err_t − α | ≤ (max{α₁, 1 − α₁} + γ) / (T γ)
//! ```
//!
//! The additive score of classic CQR is provided as a baseline.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::netcore::QuantilePrediction;
use crate::scalar::{total_cmp, Scalar};

/// Floor applied to the quantile offsets.
pub const DEFAULT_EPSILON: f64 = 0.001;
/// Step size of the `α_t` update.
pub const DEFAULT_GAMMA: f64 = 0.005;
/// Target miscoverage.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Calibrated per-dimension bounds.
///
/// `lambda` is the expansion actually applied (`∞` when the interval is the
/// whole space). An `empty` interval contains nothing; it arises when the
/// adaptive level leaves `[0, 1]` from above, or when an additive correction
/// crosses the bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionInterval<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub lambda: T,
    pub alpha_used: T,
    pub empty: bool,
}

impl<T: Scalar> PredictionInterval<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>, lambda: T, alpha_used: T) -> Self {
        let empty = lower.iter().zip(&upper).any(|(l, u)| l > u);
        PredictionInterval {
            lower,
            upper,
            lambda,
            alpha_used,
            empty,
        }
    }

    pub fn n_a(&self) -> usize {
        self.lower.len()
    }

    /// Closed containment in every dimension.
    pub fn contains(&self, action: &[T]) -> bool {
        !self.empty
            && action.len() == self.lower.len()
            && action
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(a, (l, u))| l <= a && a <= u)
    }

    /// Mean over dimensions of `upper − lower`.
    pub fn length(&self) -> T {
        if self.empty || self.lower.is_empty() {
            return T::zero();
        }
        let sum: T = self.upper.iter().zip(&self.lower).map(|(u, l)| *u - *l).sum();
        sum / T::from_usize(self.lower.len()).expect("dimension fits the scalar type")
    }

    pub fn is_nested_in(&self, other: &PredictionInterval<T>) -> bool {
        if self.empty {
            return true;
        }
        !other.empty
            && self
                .lower
                .iter()
                .zip(&self.upper)
                .zip(other.lower.iter().zip(&other.upper))
                .all(|((l, u), (ol, ou))| ol <= l && u <= ou)
    }
}

/// Quantile offsets around the mean action, floored at `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deltas<T> {
    pub minus: Vec<T>,
    pub plus: Vec<T>,
}

impl<T: Scalar> Deltas<T> {
    pub fn scaled(&self, c: T) -> Self {
        Deltas {
            minus: self.minus.iter().map(|d| *d * c).collect(),
            plus: self.plus.iter().map(|d| *d * c).collect(),
        }
    }
}

pub fn delta_bounds<T: Scalar>(pred: &QuantilePrediction<T>, epsilon: T) -> Deltas<T> {
    let plus = pred
        .q_hi
        .iter()
        .zip(&pred.a_hat)
        .map(|(hi, a)| (*hi - *a).max(epsilon))
        .collect();
    let minus = pred
        .a_hat
        .iter()
        .zip(&pred.q_lo)
        .map(|(a, lo)| (*a - *lo).max(epsilon))
        .collect();
    Deltas { minus, plus }
}

fn scaled_contains<T: Scalar>(a_hat: &[T], deltas: &Deltas<T>, rho: T, action: &[T]) -> bool {
    (0..a_hat.len()).all(|d| {
        let lo = a_hat[d] - rho * deltas.minus[d];
        let hi = a_hat[d] + rho * deltas.plus[d];
        lo <= action[d] && action[d] <= hi
    })
}

/// Nudges a closed-form score upward until the interval it implies really
/// contains the label under floating-point evaluation.
fn settle<T: Scalar>(mut score: T, contains: impl Fn(T) -> bool) -> T {
    for _ in 0..64 {
        if contains(score) {
            break;
        }
        let step = score.abs().max(T::min_positive_value()) * T::epsilon();
        score = score + step;
    }
    score
}

/// Smallest `ρ ≥ 0` with `action ∈ [â − ρΔ⁻, â + ρΔ⁺]` in all dimensions.
pub fn nonconformity_score<T: Scalar>(
    pred: &QuantilePrediction<T>,
    deltas: &Deltas<T>,
    action: &[T],
) -> Result<T> {
    let n = pred.n_a();
    check_len("label", n, action.len())?;
    check_len("deltas", n, deltas.plus.len())?;
    if deltas.minus.iter().chain(&deltas.plus).any(|d| !(*d > T::zero())) {
        return Err(Error::Config("deltas must be strictly positive".into()));
    }
    let mut rho = T::zero();
    for d in 0..n {
        let up = (action[d] - pred.a_hat[d]) / deltas.plus[d];
        let down = (pred.a_hat[d] - action[d]) / deltas.minus[d];
        rho = rho.max(up).max(down);
    }
    if !rho.is_finite() {
        return Err(Error::NonFinite("nonconformity score"));
    }
    Ok(settle(rho, |r| scaled_contains(&pred.a_hat, deltas, r, action)))
}

/// 1-based rank of the order statistic used for `Q_{1−α_t}` over `n` scores.
///
/// The level `ℓ = (1 − α_t)(1 + 1/n)` is clamped to `[0, 1]` and the
/// `⌈ℓ n⌉`-th smallest score is selected (at least the first).
pub fn quantile_rank<T: Scalar>(n: usize, alpha_t: T) -> usize {
    let n_t = T::from_usize(n).expect("count fits the scalar type");
    let scaled = (T::one() - alpha_t) * (n_t + T::one());
    // ℓ·n is an exact integer for many (α, n) pairs; absorb rounding noise
    // before taking the ceiling.
    let rounded = scaled.round();
    let tol = T::lit(1e-9) * (n_t + T::one());
    let k = if (scaled - rounded).abs() <= tol {
        rounded
    } else {
        scaled.ceil()
    };
    let k = k.max(T::one()).min(n_t);
    k.to_usize().expect("rank is finite and non-negative")
}

/// `Q_{1−α_t}(scores)`: the adaptive empirical quantile of a score multiset.
pub fn adaptive_quantile<T: Scalar>(scores: &[T], alpha_t: T) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score set"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(total_cmp);
    Ok(sorted[quantile_rank(sorted.len(), alpha_t) - 1])
}

/// `[â − λΔ⁻, â + λΔ⁺]`.
pub fn calibrated_interval<T: Scalar>(
    pred: &QuantilePrediction<T>,
    deltas: &Deltas<T>,
    lambda: T,
) -> PredictionInterval<T> {
    let lower = pred
        .a_hat
        .iter()
        .zip(&deltas.minus)
        .map(|(a, d)| *a - lambda * *d)
        .collect();
    let upper = pred
        .a_hat
        .iter()
        .zip(&deltas.plus)
        .map(|(a, d)| *a + lambda * *d)
        .collect();
    PredictionInterval::new(lower, upper, lambda, T::nan())
}

pub fn alpha_update<T: Scalar>(alpha_t: T, gamma: T, alpha_target: T, err: u8) -> T {
    let e = if err == 0 { T::zero() } else { T::one() };
    alpha_t + gamma * (alpha_target - e)
}

/// Additive CQR score `max_d max(q_lo − y, y − q_hi)`; negative iff the label
/// is strictly inside on every dimension.
pub fn cqr_score<T: Scalar>(pred: &QuantilePrediction<T>, action: &[T]) -> Result<T> {
    check_len("label", pred.n_a(), action.len())?;
    let raw = (0..pred.n_a())
        .map(|d| (pred.q_lo[d] - action[d]).max(action[d] - pred.q_hi[d]))
        .fold(T::neg_infinity(), T::max);
    if !raw.is_finite() {
        return Err(Error::NonFinite("cqr score"));
    }
    Ok(settle(raw, |s| cqr_interval(pred, s).contains(action)))
}

/// `[q_lo − c, q_hi + c]` on every dimension.
pub fn cqr_interval<T: Scalar>(pred: &QuantilePrediction<T>, correction: T) -> PredictionInterval<T> {
    PredictionInterval::new(
        pred.q_lo.iter().map(|q| *q - correction).collect(),
        pred.q_hi.iter().map(|q| *q + correction).collect(),
        correction,
        T::nan(),
    )
}

/// Euclidean distance between the interval's upper and lower bounds.
pub fn uncertainty_score<T: Scalar>(interval: &PredictionInterval<T>) -> T {
    if interval.empty {
        return T::zero();
    }
    interval
        .upper
        .iter()
        .zip(&interval.lower)
        .map(|(u, l)| (*u - *l) * (*u - *l))
        .sum::<T>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorConfig<T> {
    pub beta: T,
}

impl<T: Scalar> MonitorConfig<T> {
    pub fn new(beta: T) -> Result<Self> {
        if beta > T::zero() {
            Ok(MonitorConfig { beta })
        } else {
            Err(Error::Config(format!("beta must be positive, got {beta}")))
        }
    }
}

/// Flags high uncertainty: `U > β`.
pub fn monitor<T: Scalar>(u: T, config: &MonitorConfig<T>) -> bool {
    u > config.beta
}

/// Which nonconformity score drives the calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScoreKind {
    /// Multiplicative expansion of the quantile offsets (ACQR).
    Multiplicative,
    /// Additive widening of the raw quantiles (CQR baseline).
    Additive,
}

/// Expansion chosen for the next interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expansion<T> {
    Finite(T),
    /// `α_t < 0`: the whole space.
    Unbounded,
    /// `α_t > 1`: the empty set.
    Empty,
}

/// Result of one online calibration step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub interval: PredictionInterval<T>,
    pub err: u8,
    pub score: T,
    /// `α_t` used to build the interval.
    pub alpha_t: T,
    /// `α_{t+1}` after the update.
    pub alpha_next: T,
}

/// Online calibration state for one user stream.
///
/// Steps must be applied in stream order. The interval for step `t` is built
/// from the scores of steps `1..t−1` only; the current label's score is
/// appended afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AcqrState<T> {
    alpha_target: T,
    alpha_1: T,
    alpha_t: T,
    gamma: T,
    epsilon: T,
    kind: ScoreKind,
    scores: Vec<T>,
    err_history: Vec<u8>,
}

impl<T: Scalar> AcqrState<T> {
    pub fn new(alpha_target: T, gamma: T) -> Result<Self> {
        Self::with_kind(alpha_target, gamma, ScoreKind::Multiplicative)
    }

    pub fn with_kind(alpha_target: T, gamma: T, kind: ScoreKind) -> Result<Self> {
        if !(alpha_target > T::zero() && alpha_target < T::one()) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha_target}")));
        }
        if !(gamma > T::zero()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        Ok(AcqrState {
            alpha_target,
            alpha_1: alpha_target,
            alpha_t: alpha_target,
            gamma,
            epsilon: T::lit(DEFAULT_EPSILON),
            kind,
            scores: Vec::new(),
            err_history: Vec::new(),
        })
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn alpha_target(&self) -> T {
        self.alpha_target
    }

    pub fn alpha_1(&self) -> T {
        self.alpha_1
    }

    pub fn alpha_t(&self) -> T {
        self.alpha_t
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn t(&self) -> usize {
        self.err_history.len()
    }

    /// Scores seen so far, in ascending order.
    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn err_history(&self) -> &[u8] {
        &self.err_history
    }

    /// Expansion used before any score exists: the raw regressed quantiles.
    fn initial_lambda(&self) -> T {
        match self.kind {
            ScoreKind::Multiplicative => T::one(),
            ScoreKind::Additive => T::zero(),
        }
    }

    pub fn current_expansion(&self) -> Expansion<T> {
        if self.scores.is_empty() {
            Expansion::Finite(self.initial_lambda())
        } else if self.alpha_t < T::zero() {
            Expansion::Unbounded
        } else if self.alpha_t > T::one() {
            Expansion::Empty
        } else {
            let k = quantile_rank(self.scores.len(), self.alpha_t);
            Expansion::Finite(self.scores[k - 1])
        }
    }

    /// Expansion factor as a number: `∞` for the unbounded case, `0` for the empty one.
    pub fn current_lambda(&self) -> T {
        match self.current_expansion() {
            Expansion::Finite(l) => l,
            Expansion::Unbounded => T::infinity(),
            Expansion::Empty => T::zero(),
        }
    }

    /// Interval for an unlabeled prediction under the current state.
    pub fn interval_for(&self, pred: &QuantilePrediction<T>) -> PredictionInterval<T> {
        let expansion = self.current_expansion();
        let mut interval = match (self.kind, expansion) {
            (_, Expansion::Unbounded) => PredictionInterval::new(
                vec![T::neg_infinity(); pred.n_a()],
                vec![T::infinity(); pred.n_a()],
                T::infinity(),
                T::nan(),
            ),
            (_, Expansion::Empty) => {
                let mut i = PredictionInterval::new(
                    pred.a_hat.clone(),
                    pred.a_hat.clone(),
                    T::zero(),
                    T::nan(),
                );
                i.empty = true;
                i
            }
            (ScoreKind::Multiplicative, Expansion::Finite(l)) => {
                calibrated_interval(pred, &delta_bounds(pred, self.epsilon), l)
            }
            (ScoreKind::Additive, Expansion::Finite(c)) => cqr_interval(pred, c),
        };
        interval.alpha_used = self.alpha_t;
        interval
    }

    pub fn score(&self, pred: &QuantilePrediction<T>, action: &[T]) -> Result<T> {
        match self.kind {
            ScoreKind::Multiplicative => {
                nonconformity_score(pred, &delta_bounds(pred, self.epsilon), action)
            }
            ScoreKind::Additive => cqr_score(pred, action),
        }
    }

    /// Builds the interval from past scores, records the miss indicator,
    /// appends the new score and updates `α_t`.
    pub fn step(&mut self, pred: &QuantilePrediction<T>, action: &[T]) -> Result<StepOutcome<T>> {
        check_len("label", pred.n_a(), action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("label"));
        }
        let score = self.score(pred, action)?;
        let interval = self.interval_for(pred);
        let err = u8::from(!interval.contains(action));
        let alpha_t = self.alpha_t;
        let pos = self.scores.partition_point(|s| *s <= score);
        self.scores.insert(pos, score);
        self.err_history.push(err);
        self.alpha_t = alpha_update(alpha_t, self.gamma, self.alpha_target, err);
        Ok(StepOutcome {
            interval,
            err,
            score,
            alpha_t,
            alpha_next: self.alpha_t,
        })
    }

    /// Long-run miscoverage bound for the first `t` steps of this state.
    pub fn coverage_bound(&self, t: usize) -> T {
        coverage_bound(self.alpha_1, self.gamma, t)
    }
}

/// `(max{α₁, 1 − α₁} + γ) / (T γ)`.
pub fn coverage_bound<T: Scalar>(alpha_1: T, gamma: T, t: usize) -> T {
    let t = T::from_usize(t).expect("step count fits the scalar type");
    (alpha_1.max(T::one() - alpha_1) + gamma) / (t * gamma)
}

/// First prefix length at which the miscoverage bound fails, if any.
pub fn first_bound_violation<T: Scalar>(
    errs: &[u8],
    alpha: T,
    alpha_1: T,
    gamma: T,
) -> Option<usize> {
    let mut misses = 0usize;
    for (i, e) in errs.iter().enumerate() {
        misses += usize::from(*e != 0);
        let t = i + 1;
        let rate = T::from_usize(misses).expect("fits") / T::from_usize(t).expect("fits");
        if (rate - alpha).abs() > coverage_bound(alpha_1, gamma, t) {
            return Some(t);
        }
    }
    None
}

/// One row of the calibration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub alpha_t: f64,
    pub lambda_t: f64,
    pub err_t: u8,
    pub u_t: f64,
    pub flagged: bool,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Index of the calibration trajectory this step belongs to.
    pub traj: usize,
    /// `‖â − a‖₂` at this step.
    pub pred_error: f64,
}

/// Writes the trace as CSV:
/// `t,alpha_t,lambda_t,err_t,U_t,flagged,lower_0..,upper_0..,traj,pred_error`.
pub fn write_trace<W: Write>(writer: W, n_a: usize, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["t", "alpha_t", "lambda_t", "err_t", "U_t", "flagged"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n_a).map(|d| format!("lower_{d}")));
    header.extend((0..n_a).map(|d| format!("upper_{d}")));
    header.push("traj".into());
    header.push("pred_error".into());
    out.write_record(&header)?;
    for row in rows {
        check_len("trace row width", n_a, row.lower.len())?;
        let mut rec = vec![
            row.t.to_string(),
            row.alpha_t.to_string(),
            row.lambda_t.to_string(),
            row.err_t.to_string(),
            row.u_t.to_string(),
            row.flagged.to_string(),
        ];
        rec.extend(row.lower.iter().map(f64::to_string));
        rec.extend(row.upper.iter().map(f64::to_string));
        rec.push(row.traj.to_string());
        rec.push(row.pred_error.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut input = csv::Reader::from_reader(reader);
    let headers = input.headers()?.clone();
    let n_a = headers.iter().filter(|h| h.starts_with("lower_")).count();
    let bad = |what: &str| Error::Format(format!("trace column {what}"));
    let mut rows = Vec::new();
    for record in input.records() {
        let record = record?;
        let f = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(&i.to_string()))
        };
        let u = |i: usize| -> Result<usize> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(&i.to_string()))
        };
        rows.push(TraceRow {
            t: u(0)?,
            alpha_t: f(1)?,
            lambda_t: f(2)?,
            err_t: u(3)? as u8,
            u_t: f(4)?,
            flagged: record.get(5).map(|s| s == "true").ok_or_else(|| bad("flagged"))?,
            lower: (0..n_a).map(|d| f(6 + d)).collect::<Result<_>>()?,
            upper: (0..n_a).map(|d| f(6 + n_a + d)).collect::<Result<_>>()?,
            traj: u(6 + 2 * n_a)?,
            pred_error: f(7 + 2 * n_a)?,
        });
    }
    Ok(rows)
}

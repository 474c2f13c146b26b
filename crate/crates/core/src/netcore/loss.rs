//! Training objectives: mean squared error plus two pinball losses.

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Pinball (quantile) loss `max(tau * r, (tau - 1) * r)` with `r = target - pred`.
pub fn pinball<T: Scalar>(pred: T, target: T, tau: T) -> T {
    let r = target - pred;
    (tau * r).max((tau - T::one()) * r)
}

/// Subgradient of [`pinball`] with respect to `pred`. At the kink (`r == 0`)
/// the `(1 - tau)` branch is taken.
pub fn pinball_grad<T: Scalar>(pred: T, target: T, tau: T) -> T {
    if target - pred > T::zero() {
        -tau
    } else {
        T::one() - tau
    }
}

/// Quantile levels derived from a miscoverage target: `(alpha/2, 1 - alpha/2)`.
pub fn quantile_levels<T: Scalar>(alpha: T) -> Result<(T, T)> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let half = alpha / T::lit(2.0);
    Ok((half, T::one() - half))
}

/// Mean action and quantile heads of a quantile regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction<T> {
    pub a_hat: Vec<T>,
    pub q_lo: Vec<T>,
    pub q_hi: Vec<T>,
}

impl<T: Scalar> QuantilePrediction<T> {
    /// Splits a `3 * n_a` network output into `(mean, lower, upper)` heads.
    pub fn from_output(output: &[T]) -> Result<Self> {
        if output.len() % 3 != 0 {
            return Err(Error::Architecture(format!(
                "quantile output width {} is not a multiple of 3",
                output.len()
            )));
        }
        let n_a = output.len() / 3;
        Ok(QuantilePrediction {
            a_hat: output[..n_a].to_vec(),
            q_lo: output[n_a..2 * n_a].to_vec(),
            q_hi: output[2 * n_a..].to_vec(),
        })
    }

    pub fn n_a(&self) -> usize {
        self.a_hat.len()
    }

    pub fn scaled(&self, c: T) -> Self {
        let s = |v: &[T]| v.iter().map(|x| *x * c).collect();
        QuantilePrediction {
            a_hat: s(&self.a_hat),
            q_lo: s(&self.q_lo),
            q_hi: s(&self.q_hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub mse: T,
    pub pin_lo: T,
    pub pin_hi: T,
}

impl<T: Scalar> LossParts<T> {
    pub fn total(&self) -> T {
        self.mse + self.pin_lo + self.pin_hi
    }
}

/// `mse + pinball(tau_lo) + pinball(tau_hi)`, each averaged over action dimensions.
pub fn quantile_loss<T: Scalar>(
    pred: &QuantilePrediction<T>,
    target: &[T],
    tau_lo: T,
    tau_hi: T,
) -> Result<(T, LossParts<T>)> {
    let n = pred.n_a();
    check_len("loss target", n, target.len())?;
    check_len("lower head", n, pred.q_lo.len())?;
    check_len("upper head", n, pred.q_hi.len())?;
    let inv = T::one() / T::from_usize(n).expect("dimension fits the scalar type");
    let mut parts = LossParts {
        mse: T::zero(),
        pin_lo: T::zero(),
        pin_hi: T::zero(),
    };
    for d in 0..n {
        let e = pred.a_hat[d] - target[d];
        parts.mse = parts.mse + e * e;
        parts.pin_lo = parts.pin_lo + pinball(pred.q_lo[d], target[d], tau_lo);
        parts.pin_hi = parts.pin_hi + pinball(pred.q_hi[d], target[d], tau_hi);
    }
    parts.mse = parts.mse * inv;
    parts.pin_lo = parts.pin_lo * inv;
    parts.pin_hi = parts.pin_hi * inv;
    Ok((parts.total(), parts))
}

/// Per-sample loss on a raw network output, with its gradient.
pub trait Objective<T: Scalar> {
    /// Network output width required for `n_a` action dimensions.
    fn output_width(&self, n_a: usize) -> usize;

    /// Returns the loss and writes `d loss / d output` into `grad_out`.
    fn loss_and_grad(&self, output: &[T], target: &[T], grad_out: &mut [T]) -> T;
}

/// The quantile-regression objective over `[mean | lower | upper]` heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileObjective<T> {
    pub tau_lo: T,
    pub tau_hi: T,
}

impl<T: Scalar> QuantileObjective<T> {
    pub fn from_alpha(alpha: T) -> Result<Self> {
        let (tau_lo, tau_hi) = quantile_levels(alpha)?;
        Ok(QuantileObjective { tau_lo, tau_hi })
    }
}

impl<T: Scalar> Objective<T> for QuantileObjective<T> {
    fn output_width(&self, n_a: usize) -> usize {
        3 * n_a
    }

    fn loss_and_grad(&self, output: &[T], target: &[T], grad_out: &mut [T]) -> T {
        let n = target.len();
        let inv = T::one() / T::from_usize(n).expect("dimension fits the scalar type");
        let (mean, rest) = output.split_at(n);
        let (lo, hi) = rest.split_at(n);
        let mut loss = T::zero();
        for d in 0..n {
            let y = target[d];
            let e = mean[d] - y;
            loss = loss + e * e + pinball(lo[d], y, self.tau_lo) + pinball(hi[d], y, self.tau_hi);
            grad_out[d] = T::lit(2.0) * e * inv;
            grad_out[n + d] = pinball_grad(lo[d], y, self.tau_lo) * inv;
            grad_out[2 * n + d] = pinball_grad(hi[d], y, self.tau_hi) * inv;
        }
        loss * inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_substitutions() {
        assert!((pinball(0.0, 1.0, 0.95) - 0.95_f64).abs() < 1e-15);
        assert!((pinball(1.0, 0.0, 0.95) - 0.05_f64).abs() < 1e-15);
        assert_eq!(pinball(0.3, 0.3, 0.2_f64), 0.0);
    }

    #[test]
    fn pinball_kink_uses_upper_branch() {
        assert_eq!(pinball_grad(1.0, 1.0, 0.25_f64), 0.75);
        assert_eq!(pinball_grad(0.0, 1.0, 0.25_f64), -0.25);
        assert_eq!(pinball_grad(2.0, 1.0, 0.25_f64), 0.75);
    }

    #[test]
    fn quantile_loss_hand_case() {
        let pred = QuantilePrediction {
            a_hat: vec![0.0],
            q_lo: vec![0.0],
            q_hi: vec![0.0],
        };
        let (lo, hi) = quantile_levels(0.1).unwrap();
        let (total, parts) = quantile_loss(&pred, &[1.0], lo, hi).unwrap();
        assert!((parts.mse - 1.0_f64).abs() < 1e-15);
        assert!((parts.pin_lo - 0.05).abs() < 1e-15);
        assert!((parts.pin_hi - 0.95).abs() < 1e-15);
        assert!((total - 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_heads_have_zero_loss() {
        let y = vec![0.3, -1.2];
        let pred = QuantilePrediction {
            a_hat: y.clone(),
            q_lo: y.clone(),
            q_hi: y.clone(),
        };
        let (total, _) = quantile_loss(&pred, &y, 0.05, 0.95).unwrap();
        assert_eq!(total, 0.0);
    }

    #[test]
    fn objective_matches_quantile_loss() {
        let out: [f64; 6] = [0.1, -0.4, -0.5, -1.0, 0.9, 0.2];
        let target = [0.3, -0.2];
        let obj = QuantileObjective::from_alpha(0.1).unwrap();
        let mut g = [0.0; 6];
        let l = obj.loss_and_grad(&out, &target, &mut g);
        let pred = QuantilePrediction::from_output(&out).unwrap();
        let (total, _) = quantile_loss(&pred, &target, obj.tau_lo, obj.tau_hi).unwrap();
        assert!((l - total).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(quantile_levels(0.0_f64).is_err());
        assert!(quantile_levels(1.0_f64).is_err());
    }
}

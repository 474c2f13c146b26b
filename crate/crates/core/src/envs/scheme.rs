//! Low-DoF input labeling schemes and simulated user profiles.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{EnvSpec, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    /// A constant scalar "keep going" command.
    Advance,
    /// A transformed end-effector (or cell) displacement.
    Displacement,
}

/// Maps a state pair to the low-DoF input a user would give for it.
///
/// Displacement schemes report `gain · R(rotation) · Δ + noise`, with `R` a
/// counter-clockwise rotation and Gaussian noise drawn from a seeded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScheme {
    pub name: String,
    pub kind: SchemeKind,
    pub rotation_deg: f64,
    pub gain: f64,
    pub noise_sigma: f64,
}

/// `(rotation°, noise σ, gain)` for simulated users 2, 3 and 4.
const HUMAN_LADDER: [(f64, f64, f64); 3] = [(15.0, 0.02, 1.0), (35.0, 0.05, 0.8), (60.0, 0.1, 1.3)];

/// Rotation of the alternative heuristic labeler.
const ALT_HEURISTIC_DEG: f64 = 10.0;

impl InputScheme {
    pub fn advance() -> Self {
        InputScheme {
            name: "advance".into(),
            kind: SchemeKind::Advance,
            rotation_deg: 0.0,
            gain: 1.0,
            noise_sigma: 0.0,
        }
    }

    pub fn heuristic_xy() -> Self {
        Self::displacement("heuristic_xy", 0.0, 1.0, 0.0)
    }

    /// A labeler that reads a slightly different pair of axes than the
    /// training population: here a small fixed rotation of the plane.
    pub fn heuristic_zy_analog() -> Self {
        Self::displacement("heuristic_zy_analog", ALT_HEURISTIC_DEG, 1.0, 0.0)
    }

    pub fn noisy_human(k: usize) -> Result<Self> {
        let (rot, sigma, gain) = *k
            .checked_sub(2)
            .and_then(|i| HUMAN_LADDER.get(i))
            .ok_or_else(|| Error::Config(format!("noisy_human({k}) is not defined; use 2, 3 or 4")))?;
        Ok(Self::displacement(&format!("noisy_human({k})"), rot, gain, sigma))
    }

    pub fn displacement(name: &str, rotation_deg: f64, gain: f64, noise_sigma: f64) -> Self {
        InputScheme {
            name: name.into(),
            kind: SchemeKind::Displacement,
            rotation_deg,
            gain,
            noise_sigma,
        }
    }

    /// `H*, H1, H2, H3, H4`: increasingly unfamiliar ways of giving input.
    pub fn ladder() -> Vec<InputScheme> {
        let mut out = vec![Self::heuristic_xy(), Self::heuristic_zy_analog()];
        out.extend((2..=4).map(|k| Self::noisy_human(k).expect("ladder rung")));
        out
    }

    pub fn input_width(&self) -> usize {
        match self.kind {
            SchemeKind::Advance => 1,
            SchemeKind::Displacement => 2,
        }
    }

    fn transform(&self, d: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        [
            self.gain * (c * d[0] - s * d[1]),
            self.gain * (s * d[0] + c * d[1]),
        ]
    }
}

impl FromStr for InputScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advance" => Ok(Self::advance()),
            "heuristic_xy" => Ok(Self::heuristic_xy()),
            "heuristic_zy_analog" => Ok(Self::heuristic_zy_analog()),
            _ => {
                let k = s
                    .strip_prefix("noisy_human(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown input scheme {s:?}")))?;
                Self::noisy_human(k)
            }
        }
    }
}

impl fmt::Display for InputScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Labels every consecutive state pair of `traj`.
pub fn label_lowdim(
    env: &EnvSpec,
    traj: &Trajectory,
    scheme: &InputScheme,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if traj.states.len() < 2 {
        return Err(Error::Generation("labeling needs at least two states".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    traj.states
        .windows(2)
        .map(|w| match scheme.kind {
            SchemeKind::Advance => Ok(vec![1.0]),
            SchemeKind::Displacement => {
                let h = scheme.transform(env.displacement(&w[0], &w[1])?);
                Ok(h.iter()
                    .map(|v| {
                        if scheme.noise_sigma > 0.0 {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            v + scheme.noise_sigma * z
                        } else {
                            *v
                        }
                    })
                    .collect())
            }
        })
        .collect()
}

/// Simulated demonstrator styles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UserProfile {
    /// Goes straight for the target.
    ExpertDirect,
    /// Takes long detours before committing.
    Indirect,
    /// Wanders where precision does not matter.
    LowPrecision,
}

impl UserProfile {
    pub const ALL: [UserProfile; 3] = [UserProfile::ExpertDirect, UserProfile::Indirect, UserProfile::LowPrecision];

    pub fn name(&self) -> &'static str {
        match self {
            UserProfile::ExpertDirect => "expert_direct",
            UserProfile::Indirect => "indirect",
            UserProfile::LowPrecision => "low_precision",
        }
    }
}

impl FromStr for UserProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UserProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown user profile {s:?}")))
    }
}

impl fmt::Display for UserProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

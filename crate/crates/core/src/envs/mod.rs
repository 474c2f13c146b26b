//! Simulated teleoperation environments and demonstration generators.

pub mod arm;
pub mod catalog;
pub mod grid;
pub mod scheme;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regressor::{Dims, LabeledTriple};
use arm::{wrap_angle, PlanarArm};
use grid::GridMap;

pub use catalog::{Catalog, ScenarioSpec, Split};
pub use scheme::{label_lowdim, InputScheme, UserProfile};

/// One demonstration: `states` has one more entry than `actions` and `inputs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Mode or goal this demonstration was generated for.
    pub tag: String,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// `(s_t, h_t, a_t)` for every step; inputs must already be labeled.
    pub fn triples(&self) -> Result<Vec<LabeledTriple>> {
        if self.inputs.len() != self.actions.len() || self.states.len() != self.actions.len() + 1 {
            return Err(Error::Format(format!(
                "trajectory has {} states, {} inputs, {} actions",
                self.states.len(),
                self.inputs.len(),
                self.actions.len()
            )));
        }
        Ok(self
            .actions
            .iter()
            .enumerate()
            .map(|(t, a)| LabeledTriple {
                state: self.states[t].clone(),
                low_input: self.inputs[t].clone(),
                action: a.clone(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Grid(GridMap),
    Arm {
        arm: PlanarArm,
        /// End-effector displacement that maps to a unit input.
        input_step: f64,
    },
}

/// Everything a consumer needs to simulate and encode one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub dims: Dims,
    pub dynamics: Dynamics,
    /// Per-feature scale applied to `[state | h]` before the network.
    pub input_scale: Vec<f64>,
    pub goals: Vec<(String, Vec<f64>)>,
    pub start: Vec<f64>,
}

impl EnvSpec {
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("state", self.dims.n_s, state.len())?;
        crate::error::check_len("action", self.dims.n_a, action.len())?;
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        Ok(match &self.dynamics {
            Dynamics::Grid(map) => map.step(state, action),
            Dynamics::Arm { arm, .. } => arm.step(state, action),
        })
    }

    /// The displacement a heuristic labeler would report between two states.
    pub fn displacement(&self, from: &[f64], to: &[f64]) -> Result<[f64; 2]> {
        match &self.dynamics {
            Dynamics::Grid(_) => Ok([to[0] - from[0], to[1] - from[1]]),
            Dynamics::Arm { arm, input_step } => {
                let a = arm.fk(from)?;
                let b = arm.fk(to)?;
                Ok([(b.0 - a.0) / input_step, (b.1 - a.1) / input_step])
            }
        }
    }

    /// Replays `traj.actions` from its first state and demands exact agreement.
    pub fn replay(&self, traj: &Trajectory) -> Result<()> {
        let mut state = traj
            .states
            .first()
            .ok_or_else(|| Error::Format("trajectory without states".into()))?
            .clone();
        for (t, a) in traj.actions.iter().enumerate() {
            state = self.step(&state, a)?;
            if state != traj.states[t + 1] {
                return Err(Error::Format(format!(
                    "replay diverges at step {t}: {:?} != {:?}",
                    state,
                    traj.states[t + 1]
                )));
            }
        }
        Ok(())
    }

    /// `a_t == s_{t+1} − s_t` on the controlled coordinates (angles wrapped).
    pub fn action_matches_difference(&self, traj: &Trajectory) -> bool {
        traj.actions.iter().enumerate().all(|(t, a)| {
            let (s, n) = (&traj.states[t], &traj.states[t + 1]);
            a.iter().zip(s.iter().zip(n)).all(|(a, (s, n))| match self.dynamics {
                Dynamics::Grid(_) => *a == n - s,
                Dynamics::Arm { .. } => (wrap_angle(n - s) - wrap_angle(*a)).abs() < 1e-9,
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    pub profile: String,
    pub scheme: String,
    pub seed: u64,
}

/// Labeled demonstrations for one `(scenario, profile, scheme, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub env: String,
    pub provenance: Provenance,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct JsonlLine {
    env: String,
    scenario: String,
    profile: String,
    scheme: String,
    seed: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    tag: String,
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

impl ScenarioDataset {
    pub fn triples(&self) -> Result<Vec<LabeledTriple>> {
        let mut out = Vec::new();
        for t in &self.trajectories {
            out.extend(t.triples()?);
        }
        Ok(out)
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::steps).sum()
    }

    /// First `n` trajectories and the rest, as two datasets with the same provenance.
    pub fn split_at(&self, n: usize) -> (ScenarioDataset, ScenarioDataset) {
        let n = n.min(self.trajectories.len());
        let mut head = self.clone();
        let tail_trajs = head.trajectories.split_off(n);
        let tail = ScenarioDataset {
            trajectories: tail_trajs,
            ..self.clone()
        };
        (head, tail)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.trajectories {
            let line = JsonlLine {
                env: self.env.clone(),
                scenario: self.provenance.scenario.clone(),
                profile: self.provenance.profile.clone(),
                scheme: self.provenance.scheme.clone(),
                seed: self.provenance.seed,
                tag: t.tag.clone(),
                states: t.states.clone(),
                inputs: t.inputs.clone(),
                actions: t.actions.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a JSONL dataset. Every line must share the first line's provenance.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut out: Option<ScenarioDataset> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonlLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
            let provenance = Provenance {
                scenario: rec.scenario,
                profile: rec.profile,
                scheme: rec.scheme,
                seed: rec.seed,
            };
            let traj = Trajectory {
                states: rec.states,
                inputs: rec.inputs,
                actions: rec.actions,
                tag: rec.tag,
            };
            match &mut out {
                None => {
                    out = Some(ScenarioDataset {
                        env: rec.env,
                        provenance,
                        trajectories: vec![traj],
                    })
                }
                Some(ds) => {
                    if ds.env != rec.env || ds.provenance != provenance {
                        return Err(Error::Format(format!("line {} mixes datasets", i + 1)));
                    }
                    ds.trajectories.push(traj);
                }
            }
        }
        out.ok_or(Error::EmptyDataset)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(fs::File::open(path)?))
    }
}

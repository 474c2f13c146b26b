//! Scenario catalog: grid layouts, arm parameters, demonstrator profiles and
//! the train/calibration recipe of every scenario.
//!
//! The built-in catalog lives in `catalog.json` next to this file; a custom
//! one can be loaded from disk with the same schema.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::arm::{jitter_pose, plan_path, ArmBehaviour, PlanarArm, Pose};
use super::grid::{
    gen_grid_precision, gen_grid_preference, GridBehaviour, GridLayout, GridMap, PrecisionLayout,
    PreferenceRoutes, GRID_SIZE,
};
use super::scheme::{label_lowdim, InputScheme, UserProfile};
use super::{Dynamics, EnvSpec, Provenance, ScenarioDataset, Trajectory};
use crate::error::{Error, Result};
use crate::netcore::TrainConfig;
use crate::regressor::Dims;

const BUILTIN: &str = include_str!("catalog.json");

/// Resampling budget for arm demonstrations whose path leaves the workspace.
const ARM_ATTEMPTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartJitter {
    pub position: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub links: [f64; 3],
    pub input_step: f64,
    pub steps: usize,
    pub start: Pose,
    pub start_jitter: StartJitter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridProfile {
    pub noise_sigma: f64,
    pub detour: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub grid: BTreeMap<String, GridProfile>,
    pub arm: BTreeMap<String, ArmBehaviour>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    GridPreference { map: String, routes: PreferenceRoutes },
    GridPrecision { map: String, layout: PrecisionLayout },
    ArmReach { targets: Vec<Target> },
}

/// Who demonstrates, how they label, and how many demonstrations.
///
/// `n` counts trajectories per mode for multi-mode generators and in total
/// for the precision grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub profile: String,
    pub scheme: String,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Training {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub description: String,
    /// Monitor threshold for in-distribution users.
    pub beta: f64,
    /// Monitor threshold for users with unfamiliar input schemes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_ood: Option<f64>,
    pub generator: Generator,
    pub train: Split,
    pub calib: Split,
    pub training: Training,
}

impl ScenarioSpec {
    pub fn env_name(&self) -> String {
        match &self.generator {
            Generator::GridPreference { map, .. } | Generator::GridPrecision { map, .. } => format!("grid/{map}"),
            Generator::ArmReach { .. } => "arm".into(),
        }
    }

    pub fn is_grid(&self) -> bool {
        !matches!(self.generator, Generator::ArmReach { .. })
    }

    pub fn train_config(&self, alpha: f64) -> TrainConfig<f64> {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            seed: self.training.seed,
            alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub maps: BTreeMap<String, GridLayout>,
    pub arm: ArmParams,
    pub profiles: ProfileTable,
    pub scenarios: Vec<ScenarioSpec>,
}

/// Per-trajectory labeling seed derived from the split seed.
fn label_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(index as u64 + 1)
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("built-in catalog parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cat: Catalog = serde_json::from_str(text).map_err(|e| Error::Catalog(e.to_string()))?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        for layout in self.maps.values() {
            GridMap::from_layout(layout)?;
        }
        for s in &self.scenarios {
            for split in [&s.train, &s.calib] {
                split.scheme.parse::<InputScheme>()?;
                let profile: UserProfile = split.profile.parse()?;
                self.profile_known(s, profile)?;
            }
            match &s.generator {
                Generator::GridPreference { map, .. } | Generator::GridPrecision { map, .. } => {
                    self.layout(map)?;
                }
                Generator::ArmReach { targets } if targets.is_empty() => {
                    return Err(Error::Catalog(format!("{} has no targets", s.id)));
                }
                Generator::ArmReach { .. } => {}
            }
        }
        Ok(())
    }

    fn profile_known(&self, s: &ScenarioSpec, p: UserProfile) -> Result<()> {
        let known = if s.is_grid() {
            self.profiles.grid.contains_key(p.name())
        } else {
            self.profiles.arm.contains_key(p.name())
        };
        if known {
            Ok(())
        } else {
            Err(Error::Catalog(format!("profile {p} has no parameters for {}", s.id)))
        }
    }

    fn layout(&self, name: &str) -> Result<&GridLayout> {
        self.maps
            .get(name)
            .ok_or_else(|| Error::Catalog(format!("unknown map {name:?}")))
    }

    pub fn scenario_ids(&self) -> Vec<&str> {
        self.scenarios.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn scenario(&self, id: &str) -> Result<&ScenarioSpec> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Catalog(format!("unknown scenario {id:?}")))
    }

    pub fn planar_arm(&self) -> PlanarArm {
        PlanarArm { links: self.arm.links }
    }

    /// The environment of `scenario` when labeled with `scheme`.
    pub fn env(&self, scenario: &str, scheme: &InputScheme) -> Result<EnvSpec> {
        let s = self.scenario(scenario)?;
        let n_u = scheme.input_width();
        match &s.generator {
            Generator::GridPreference { map, .. } | Generator::GridPrecision { map, .. } => {
                let layout = self.layout(map)?;
                let grid = GridMap::from_layout(layout)?;
                let inv = 1.0 / (GRID_SIZE - 1) as f64;
                let mut input_scale = vec![inv, inv];
                input_scale.extend(std::iter::repeat_n(1.0, n_u));
                let start = match &s.generator {
                    Generator::GridPreference { routes, .. } => routes.start_zone.min,
                    Generator::GridPrecision { layout, .. } => layout.start_zone.min,
                    Generator::ArmReach { .. } => unreachable!(),
                };
                Ok(EnvSpec {
                    name: s.env_name(),
                    dims: Dims { n_s: 2, n_u, n_a: 2 },
                    goals: vec![("goal".into(), vec![layout.goal.0 as f64, layout.goal.1 as f64])],
                    start: vec![start.0 as f64, start.1 as f64],
                    dynamics: Dynamics::Grid(grid),
                    input_scale,
                })
            }
            Generator::ArmReach { targets } => {
                let arm = self.planar_arm();
                let start = arm
                    .ik(self.arm.start)
                    .ok_or_else(|| Error::Catalog("arm start pose is out of reach".into()))?;
                let mut input_scale = vec![1.0 / PI; 3];
                input_scale.extend(std::iter::repeat_n(1.0, n_u));
                Ok(EnvSpec {
                    name: s.env_name(),
                    dims: Dims { n_s: 3, n_u, n_a: 3 },
                    goals: targets
                        .iter()
                        .map(|t| (t.name.clone(), vec![t.pose.x, t.pose.y, t.pose.phi]))
                        .collect(),
                    start: start.to_vec(),
                    dynamics: Dynamics::Arm {
                        arm,
                        input_step: self.arm.input_step,
                    },
                    input_scale,
                })
            }
        }
    }

    /// Generates and labels the demonstrations described by `split`.
    pub fn generate(&self, scenario: &str, split: &Split) -> Result<ScenarioDataset> {
        let s = self.scenario(scenario)?;
        let scheme: InputScheme = split.scheme.parse()?;
        let profile: UserProfile = split.profile.parse()?;
        self.profile_known(s, profile)?;
        if split.n == 0 {
            return Err(Error::Generation("a split needs at least one trajectory".into()));
        }
        let env = self.env(scenario, &scheme)?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(split.seed);
        let mut trajectories = match &s.generator {
            Generator::GridPreference { map, routes } => {
                let grid = GridMap::from_layout(self.layout(map)?)?;
                let routes = select_modes(routes, split.modes.as_deref())?;
                gen_grid_preference(&grid, &routes, split.n, &mut rng)?
            }
            Generator::GridPrecision { map, layout } => {
                let grid = GridMap::from_layout(self.layout(map)?)?;
                let p = self.profiles.grid[profile.name()];
                let behaviour = GridBehaviour {
                    noise_sigma: p.noise_sigma,
                    detour: p.detour,
                };
                gen_grid_precision(&grid, layout, split.n, behaviour, &mut rng)?
            }
            Generator::ArmReach { targets } => {
                let behaviour = self.profiles.arm[profile.name()];
                let chosen: Vec<&Target> = match &split.modes {
                    None => targets.iter().collect(),
                    Some(names) => names
                        .iter()
                        .map(|n| {
                            targets
                                .iter()
                                .find(|t| &t.name == n)
                                .ok_or_else(|| Error::Catalog(format!("unknown target {n:?}")))
                        })
                        .collect::<Result<_>>()?,
                };
                self.gen_arm(&chosen, split.n, &behaviour, &mut rng)?
            }
        };
        for (i, t) in trajectories.iter_mut().enumerate() {
            t.inputs = label_lowdim(&env, t, &scheme, label_seed(split.seed, i))?;
        }
        Ok(ScenarioDataset {
            env: env.name,
            provenance: Provenance {
                scenario: s.id.clone(),
                profile: profile.name().into(),
                scheme: scheme.name,
                seed: split.seed,
            },
            trajectories,
        })
    }

    /// The catalog's training split of `scenario`.
    pub fn train_set(&self, scenario: &str) -> Result<ScenarioDataset> {
        let split = self.scenario(scenario)?.train.clone();
        self.generate(scenario, &split)
    }

    /// The catalog's held-out calibration split of `scenario`.
    pub fn calib_set(&self, scenario: &str) -> Result<ScenarioDataset> {
        let split = self.scenario(scenario)?.calib.clone();
        self.generate(scenario, &split)
    }

    /// Arm demonstrations, `n_per_target` per target, interleaved by target.
    fn gen_arm(
        &self,
        targets: &[&Target],
        n_per_target: usize,
        behaviour: &ArmBehaviour,
        rng: &mut Xoshiro256PlusPlus,
    ) -> Result<Vec<Trajectory>> {
        let arm = self.planar_arm();
        let mut out = Vec::with_capacity(n_per_target * targets.len());
        for _ in 0..n_per_target {
            for target in targets {
                let mut attempt = 0;
                let traj = loop {
                    let start = jitter_pose(
                        self.arm.start,
                        self.arm.start_jitter.position,
                        self.arm.start_jitter.angle,
                        rng,
                    );
                    let path = plan_path(start, target.pose, self.arm.steps, behaviour, rng);
                    match arm.track(&path) {
                        Ok(t) => break t,
                        Err(e) if attempt + 1 >= ARM_ATTEMPTS => return Err(e),
                        Err(_) => attempt += 1,
                    }
                };
                out.push(Trajectory {
                    tag: target.name.clone(),
                    ..traj
                });
            }
        }
        Ok(out)
    }
}

fn select_modes(routes: &PreferenceRoutes, modes: Option<&[String]>) -> Result<PreferenceRoutes> {
    let Some(names) = modes else {
        return Ok(routes.clone());
    };
    let picked = names
        .iter()
        .map(|n| {
            routes
                .modes
                .iter()
                .find(|(m, _)| m == n)
                .cloned()
                .ok_or_else(|| Error::Catalog(format!("unknown preference mode {n:?}")))
        })
        .collect::<Result<_>>()?;
    Ok(PreferenceRoutes {
        start_zone: routes.start_zone,
        modes: picked,
    })
}

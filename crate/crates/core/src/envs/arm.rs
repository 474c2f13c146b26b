//! Three-link planar arm: joint-angle state, joint-delta actions.
//!
//! Demonstrations are planned in task space `(x, y, φ)`, where `φ` is the
//! tool orientation `θ₁ + θ₂ + θ₃`, and converted to joint motion through
//! closed-form inverse kinematics. The tool orientation is the degree of
//! freedom the two-dimensional end-effector input does not reveal.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{check_len, Error, Result};

/// Wraps an angle into `[−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w < -PI {
        w += 2.0 * PI;
    }
    w
}

/// Task-space pose of the tool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose {
    pub fn dist(&self, p: (f64, f64)) -> f64 {
        ((self.x - p.0).powi(2) + (self.y - p.1).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarArm {
    pub links: [f64; 3],
}

impl Default for PlanarArm {
    fn default() -> Self {
        PlanarArm { links: [1.0, 1.0, 1.0] }
    }
}

impl PlanarArm {
    /// Cumulative-angle forward kinematics of the tool point.
    pub fn fk(&self, joints: &[f64]) -> Result<(f64, f64)> {
        check_len("joint angles", 3, joints.len())?;
        let mut angle = 0.0;
        let (mut x, mut y) = (0.0, 0.0);
        for (theta, len) in joints.iter().zip(&self.links) {
            angle += theta;
            x += len * angle.cos();
            y += len * angle.sin();
        }
        Ok((x, y))
    }

    pub fn pose(&self, joints: &[f64]) -> Result<Pose> {
        let (x, y) = self.fk(joints)?;
        Ok(Pose {
            x,
            y,
            phi: wrap_angle(joints.iter().sum()),
        })
    }

    /// Elbow-positive inverse kinematics; `None` when the wrist point is out of reach.
    pub fn ik(&self, pose: Pose) -> Option<[f64; 3]> {
        let [l1, l2, l3] = self.links;
        let wx = pose.x - l3 * pose.phi.cos();
        let wy = pose.y - l3 * pose.phi.sin();
        let c2 = (wx * wx + wy * wy - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c2) {
            return None;
        }
        let t2 = c2.acos();
        let t1 = wy.atan2(wx) - (l2 * t2.sin()).atan2(l1 + l2 * t2.cos());
        let t3 = pose.phi - t1 - t2;
        Some([wrap_angle(t1), wrap_angle(t2), wrap_angle(t3)])
    }

    /// Joint dynamics: `θ ← wrap(θ + a)`.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(action)
            .map(|(t, a)| wrap_angle(t + a))
            .collect()
    }

    /// Tracks a task-space pose sequence. Each action is the wrapped joint
    /// difference to the next IK solution and the stored state is obtained by
    /// applying it through [`PlanarArm::step`], so replays are exact.
    pub fn track(&self, poses: &[Pose]) -> Result<Trajectory> {
        let first = poses
            .first()
            .ok_or_else(|| Error::Generation("empty pose sequence".into()))?;
        let solve = |p: &Pose| {
            self.ik(*p)
                .ok_or_else(|| Error::Generation(format!("pose {p:?} is out of reach")))
        };
        let mut state = solve(first)?.to_vec();
        let mut states = vec![state.clone()];
        let mut actions = Vec::with_capacity(poses.len() - 1);
        for p in &poses[1..] {
            let target = solve(p)?;
            let action: Vec<f64> = target
                .iter()
                .zip(&state)
                .map(|(t, s)| wrap_angle(t - s))
                .collect();
            state = self.step(&state, &action);
            states.push(state.clone());
            actions.push(action);
        }
        Ok(Trajectory {
            states,
            inputs: Vec::new(),
            actions,
            tag: String::new(),
        })
    }
}

/// How an arm demonstrator moves between two poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmBehaviour {
    /// Std of per-waypoint positional jitter (task-space units).
    pub jitter: f64,
    /// Jitter shrinks linearly to zero as the remaining distance shrinks.
    pub decay_near_target: bool,
    /// Retreat length before a wide lateral swing; 0 for a direct path.
    pub detour: f64,
}

impl ArmBehaviour {
    pub fn direct() -> Self {
        ArmBehaviour {
            jitter: 0.0,
            decay_near_target: false,
            detour: 0.0,
        }
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Poses along a task-space path from `start` to `goal` in `steps` moves.
///
/// A direct path is the straight segment. With a detour the path first
/// retreats by `detour` in one step, swings out laterally by three detour
/// lengths around the midpoint, then closes in on the goal.
pub fn plan_path<R: Rng>(
    start: Pose,
    goal: Pose,
    steps: usize,
    behaviour: &ArmBehaviour,
    rng: &mut R,
) -> Vec<Pose> {
    let steps = steps.max(2);
    let (dx, dy) = (goal.x - start.x, goal.y - start.y);
    let len = (dx * dx + dy * dy).sqrt().max(1e-9);
    let (ux, uy) = (dx / len, dy / len);
    let dphi = wrap_angle(goal.phi - start.phi);

    // Polyline anchors with their share of the orientation change.
    let mut anchors: Vec<(f64, f64)> = vec![(start.x, start.y)];
    if behaviour.detour > 0.0 {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        anchors.push((start.x - behaviour.detour * ux, start.y - behaviour.detour * uy));
        let swing = 3.0 * behaviour.detour * side;
        anchors.push((
            start.x + 0.5 * dx - swing * uy,
            start.y + 0.5 * dy + swing * ux,
        ));
    }
    anchors.push((goal.x, goal.y));

    let mut positions = vec![(start.x, start.y)];
    if behaviour.detour > 0.0 {
        positions.push(anchors[1]);
        let rest = steps - 1;
        let seg = |a: (f64, f64), b: (f64, f64)| ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let l1 = seg(anchors[1], anchors[2]);
        let l2 = seg(anchors[2], anchors[3]);
        let n1 = ((rest as f64 * l1 / (l1 + l2)).round() as usize).clamp(1, rest - 1);
        for k in 1..=n1 {
            let s = k as f64 / n1 as f64;
            positions.push((lerp(anchors[1].0, anchors[2].0, s), lerp(anchors[1].1, anchors[2].1, s)));
        }
        let n2 = rest - n1;
        for k in 1..=n2 {
            let s = k as f64 / n2 as f64;
            positions.push((lerp(anchors[2].0, anchors[3].0, s), lerp(anchors[2].1, anchors[3].1, s)));
        }
    } else {
        for k in 1..=steps {
            let s = k as f64 / steps as f64;
            positions.push((lerp(start.x, goal.x, s), lerp(start.y, goal.y, s)));
        }
    }

    let n = positions.len() - 1;
    positions
        .into_iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let s = k as f64 / n as f64;
            let mut p = Pose {
                x,
                y,
                phi: start.phi + dphi * s,
            };
            if behaviour.jitter > 0.0 && k > 0 && k < n {
                let scale = if behaviour.decay_near_target {
                    (goal.dist((x, y)) / len).min(1.0)
                } else {
                    1.0
                };
                let zx: f64 = StandardNormal.sample(rng);
                let zy: f64 = StandardNormal.sample(rng);
                p.x += behaviour.jitter * scale * zx;
                p.y += behaviour.jitter * scale * zy;
            }
            p
        })
        .collect()
}

/// Draws `base` perturbed by Gaussian noise of std `pos` on position and `ang` on orientation.
pub fn jitter_pose<R: Rng>(base: Pose, pos: f64, ang: f64, rng: &mut R) -> Pose {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    Pose {
        x: base.x + pos * n(),
        y: base.y + pos * n(),
        phi: base.phi + ang * n(),
    }
}

//! 25x25 GridWorld with an obstacle mask and Chebyshev (8-neighbour) moves.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

pub const GRID_SIZE: i32 = 25;

pub type Cell = (i32, i32);

/// Axis-aligned inclusive rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Cell,
    pub max: Cell,
}

impl Rect {
    pub fn contains(&self, c: Cell) -> bool {
        (self.min.0..=self.max.0).contains(&c.0) && (self.min.1..=self.max.1).contains(&c.1)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.min.1..=self.max.1).flat_map(move |y| (self.min.0..=self.max.0).map(move |x| (x, y)))
    }
}

/// Layout as declared in the catalog: `rows[0]` is the top row (`y = 24`),
/// `#` marks an obstacle, anything else is free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: Vec<String>,
    pub goal: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    blocked: Vec<bool>,
    pub goal: Cell,
}

fn sign(v: i32) -> i32 {
    v.signum()
}

impl GridMap {
    pub fn from_layout(layout: &GridLayout) -> Result<Self> {
        if layout.rows.len() != GRID_SIZE as usize {
            return Err(Error::Catalog(format!(
                "grid needs {GRID_SIZE} rows, got {}",
                layout.rows.len()
            )));
        }
        let mut blocked = vec![false; (GRID_SIZE * GRID_SIZE) as usize];
        for (r, row) in layout.rows.iter().enumerate() {
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != GRID_SIZE as usize {
                return Err(Error::Catalog(format!("grid row {r} has {} cells", chars.len())));
            }
            let y = GRID_SIZE - 1 - r as i32;
            for (x, ch) in chars.into_iter().enumerate() {
                blocked[(y * GRID_SIZE + x as i32) as usize] = ch == '#';
            }
        }
        let map = GridMap {
            blocked,
            goal: layout.goal,
        };
        if !map.is_free(map.goal) {
            return Err(Error::Catalog("grid goal is not a free cell".into()));
        }
        Ok(map)
    }

    pub fn in_bounds(c: Cell) -> bool {
        (0..GRID_SIZE).contains(&c.0) && (0..GRID_SIZE).contains(&c.1)
    }

    pub fn is_free(&self, c: Cell) -> bool {
        Self::in_bounds(c) && !self.blocked[(c.1 * GRID_SIZE + c.0) as usize]
    }

    /// Applies a lattice move; moves off the grid or into an obstacle leave
    /// the robot in place.
    pub fn step_cell(&self, c: Cell, mv: Cell) -> Cell {
        let mv = (mv.0.clamp(-1, 1), mv.1.clamp(-1, 1));
        let next = (c.0 + mv.0, c.1 + mv.1);
        if self.is_free(next) {
            next
        } else {
            c
        }
    }

    /// Continuous-action dynamics: each component is rounded to `{-1, 0, 1}`.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let c = (state[0].round() as i32, state[1].round() as i32);
        let mv = (
            action[0].round().clamp(-1.0, 1.0) as i32,
            action[1].round().clamp(-1.0, 1.0) as i32,
        );
        let n = self.step_cell(c, mv);
        vec![n.0 as f64, n.1 as f64]
    }

    /// Greedy Chebyshev path from `from` through `waypoints`, failing on any
    /// obstacle.
    pub fn follow(&self, from: Cell, waypoints: &[Cell]) -> Result<Vec<Cell>> {
        let mut path = vec![from];
        let mut cur = from;
        for &wp in waypoints {
            while cur != wp {
                let next = (cur.0 + sign(wp.0 - cur.0), cur.1 + sign(wp.1 - cur.1));
                if !self.is_free(next) {
                    return Err(Error::Generation(format!(
                        "path from {cur:?} towards {wp:?} hits an obstacle"
                    )));
                }
                cur = next;
                path.push(cur);
            }
        }
        Ok(path)
    }
}

fn to_trajectory(cells: &[Cell]) -> Trajectory {
    let states: Vec<Vec<f64>> = cells.iter().map(|c| vec![c.0 as f64, c.1 as f64]).collect();
    let actions = cells
        .windows(2)
        .map(|w| vec![(w[1].0 - w[0].0) as f64, (w[1].1 - w[0].1) as f64])
        .collect();
    Trajectory {
        states,
        inputs: Vec::new(),
        actions,
        tag: String::new(),
    }
}

fn random_free_cell<R: Rng>(map: &GridMap, zone: &Rect, rng: &mut R) -> Result<Cell> {
    let free: Vec<Cell> = zone.cells().filter(|c| map.is_free(*c)).collect();
    if free.is_empty() {
        return Err(Error::Generation(format!("no free cell in {zone:?}")));
    }
    Ok(free[rng.random_range(0..free.len())])
}

/// Preference scenario parameters: a shared start zone and one waypoint
/// route per preference mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRoutes {
    pub start_zone: Rect,
    pub modes: Vec<(String, Vec<Cell>)>,
}

/// Noiseless trajectories, `n_per_mode` for each route, interleaved by mode.
pub fn gen_grid_preference<R: Rng>(
    map: &GridMap,
    routes: &PreferenceRoutes,
    n_per_mode: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if n_per_mode == 0 {
        return Err(Error::Generation("n_per_mode must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n_per_mode * routes.modes.len());
    for _ in 0..n_per_mode {
        let start = random_free_cell(map, &routes.start_zone, rng)?;
        for (name, route) in &routes.modes {
            let mut t = to_trajectory(&map.follow(start, route)?);
            t.tag = name.clone();
            out.push(t);
        }
    }
    Ok(out)
}

/// Precision scenario parameters: random starts in the open region, noisy
/// moves until the tunnel mouth, then a deterministic run to the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionLayout {
    pub start_zone: Rect,
    /// Cells where the demonstrator never deviates (the hallway and its mouth).
    pub tunnel: Rect,
    pub mouth: Cell,
    /// Noise is switched off after this many open-region steps.
    pub max_noisy_steps: usize,
}

/// How a grid demonstrator moves through the open region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBehaviour {
    pub noise_sigma: f64,
    /// Chebyshev radius of a detour taken before heading for the mouth; 0 for none.
    pub detour: i32,
}

fn noisy_move<R: Rng>(map: &GridMap, cur: Cell, ideal: Cell, sigma: f64, rng: &mut R) -> Cell {
    if sigma <= 0.0 {
        return ideal;
    }
    let mut perturb = |d: i32| -> i32 {
        let z: f64 = StandardNormal.sample(rng);
        (d as f64 + sigma * z).round().clamp(-1.0, 1.0) as i32
    };
    let mut mv = (perturb(ideal.0), perturb(ideal.1));
    // Drop whichever component would leave the free space.
    if !map.is_free((cur.0 + mv.0, cur.1 + mv.1)) {
        if map.is_free((cur.0 + mv.0, cur.1)) {
            mv.1 = 0;
        } else if map.is_free((cur.0, cur.1 + mv.1)) {
            mv.0 = 0;
        } else {
            mv = (0, 0);
        }
    }
    mv
}

pub fn gen_grid_precision<R: Rng>(
    map: &GridMap,
    layout: &PrecisionLayout,
    n: usize,
    behaviour: GridBehaviour,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Generation("n must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let start = random_free_cell(map, &layout.start_zone, rng)?;
        let mut cells = vec![start];
        let mut cur = start;
        let mut targets = Vec::new();
        if behaviour.detour > 0 {
            let dx = if rng.random_bool(0.5) { 1 } else { -1 };
            let detour = (
                (cur.0 + dx * behaviour.detour).clamp(0, GRID_SIZE - 1),
                (cur.1 - behaviour.detour).max(layout.start_zone.min.1),
            );
            if map.is_free(detour) {
                targets.push(detour);
            }
        }
        targets.push(layout.mouth);
        let mut noisy_steps = 0;
        for target in targets {
            while cur != target {
                if cells.len() > 20 * GRID_SIZE as usize {
                    return Err(Error::Generation(format!("no progress towards {target:?}")));
                }
                let ideal = (sign(target.0 - cur.0), sign(target.1 - cur.1));
                let sigma = if noisy_steps < layout.max_noisy_steps && !layout.tunnel.contains(cur) {
                    behaviour.noise_sigma
                } else {
                    0.0
                };
                let mut mv = noisy_move(map, cur, ideal, sigma, rng);
                // A stray move never enters the tunnel; the way in is the mouth.
                if layout.tunnel.contains(map.step_cell(cur, mv)) {
                    mv = ideal;
                }
                noisy_steps += 1;
                cur = map.step_cell(cur, mv);
                cells.push(cur);
            }
        }
        let tail = map.follow(cur, &[map.goal])?;
        cells.extend_from_slice(&tail[1..]);
        let mut t = to_trajectory(&cells);
        t.tag = "precision".into();
        out.push(t);
    }
    Ok(out)
}

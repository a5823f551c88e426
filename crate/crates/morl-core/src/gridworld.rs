//! Multi-objective gridworld environments.
//!
//! Worlds are rectangular grids with up to six objectives, each defined by a
//! reward map over cells. Objectives come in a fixed order:
//!
//! 1. stay on the road (a serpentine path across the grid)
//! 2. avoid hazards (reward 0 at hazard centers, rising with distance)
//! 3. move right
//! 4. move up
//! 5. move toward the center row
//! 6. move toward the center column
//!
//! Movement is stochastic: with probability `slip_prob` the executed
//! direction is drawn uniformly from the three directions that were *not*
//! chosen. Moves into a wall leave the agent in place. Episodes run for a
//! fixed horizon; the reward vector of a transition is read from the maps at
//! the arrived-at cell.

use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::rng::{mix, TAG_HAZARDS};
use crate::speclang::{RewardVector, MAX_OBJECTIVES};

/// Road reward falls off linearly over this many cells of Chebyshev distance.
const ROAD_FALLOFF: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world configuration: {msg}")]
    Config { msg: &'static str },
    #[error("episode is over: state at t={t}, horizon {horizon}")]
    EpisodeOver { t: u32, horizon: u32 },
}

/// Grid footprint of a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GridSize {
    /// 5×5 cells.
    Small,
    /// 12×12 cells.
    Medium,
    /// 20×20 cells.
    Large,
}

impl GridSize {
    pub fn dims(self) -> (usize, usize) {
        match self {
            GridSize::Small => (5, 5),
            GridSize::Medium => (12, 12),
            GridSize::Large => (20, 20),
        }
    }

    /// Steps per episode, sized so an agent can traverse the grid several
    /// times within one episode.
    pub fn horizon(self) -> u32 {
        match self {
            GridSize::Small => 50,
            GridSize::Medium => 100,
            GridSize::Large => 150,
        }
    }

    fn hazard_count(self) -> usize {
        match self {
            GridSize::Small => 3,
            GridSize::Medium => 5,
            GridSize::Large => 8,
        }
    }

    /// Distance at which hazard reward saturates to 1. Scaled down on the
    /// small grid, where a radius of 4 would leave no fully safe cell.
    fn hazard_radius(self) -> f64 {
        match self {
            GridSize::Small => 2.0,
            GridSize::Medium | GridSize::Large => 4.0,
        }
    }
}

/// One of the four movement actions, in fixed tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    /// (dx, dy) with y increasing downward, so `Up` decreases y.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

/// Environment state: grid position plus the episode step counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MOState {
    pub x: usize,
    pub y: usize,
    pub t: u32,
}

/// One environment transition, carrying the full reward vector of the
/// arrived-at state.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: MOState,
    pub action: Action,
    pub next: MOState,
    pub terminal: bool,
    pub reward: RewardVector,
}

/// An immutable multi-objective gridworld.
#[derive(Debug, Clone)]
pub struct GridWorld {
    width: usize,
    height: usize,
    n_objectives: usize,
    slip_prob: f64,
    horizon: u32,
    reward_maps: Vec<Vec<f64>>,
    road: Vec<bool>,
    hazard_centers: Vec<(usize, usize)>,
}

impl GridWorld {
    /// Builds a world deterministically from its size, objective count, and
    /// seed (which places the hazards on off-road cells).
    pub fn build(size: GridSize, n_objectives: usize, seed: u64) -> Result<Self, WorldError> {
        if n_objectives == 0 || n_objectives > MAX_OBJECTIVES {
            return Err(WorldError::Config { msg: "objective count must be between 1 and 6" });
        }
        let (width, height) = size.dims();
        let road = serpentine_road(width, height);
        let hazard_centers = place_hazards(&road, width, height, size.hazard_count(), seed);

        let mut reward_maps = Vec::with_capacity(n_objectives);
        for objective in 0..n_objectives {
            reward_maps.push(build_map(objective, width, height, &road, &hazard_centers, size));
        }

        Ok(Self {
            width,
            height,
            n_objectives,
            slip_prob: 0.1,
            horizon: size.horizon(),
            reward_maps,
            road,
            hazard_centers,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn slip_prob(&self) -> f64 {
        self.slip_prob
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_road(&self, x: usize, y: usize) -> bool {
        self.road[self.cell_index(x, y)]
    }

    pub fn hazard_centers(&self) -> &[(usize, usize)] {
        &self.hazard_centers
    }

    /// Reward map of one objective, row-major.
    pub fn reward_map(&self, objective: usize) -> &[f64] {
        &self.reward_maps[objective]
    }

    /// A copy of this world with a different slip probability. Useful for
    /// deterministic policy rollouts.
    pub fn with_slip(&self, slip_prob: f64) -> GridWorld {
        let mut w = self.clone();
        w.slip_prob = slip_prob;
        w
    }

    /// Uniformly random start cell at t = 0.
    pub fn reset<R: Rng>(&self, rng: &mut R) -> MOState {
        let x = rng.gen_range(0..self.width);
        let y = rng.gen_range(0..self.height);
        MOState { x, y, t: 0 }
    }

    /// Reward vector at a state, read from the per-objective maps.
    pub fn reward_vector(&self, s: MOState) -> RewardVector {
        let idx = self.cell_index(s.x, s.y);
        let vals: Vec<f64> = self.reward_maps.iter().map(|m| m[idx]).collect();
        RewardVector::new(&vals).expect("reward maps are bounded to [0,1]")
    }

    /// Destination of a move, clamped at walls (the agent stays in place on a
    /// boundary collision).
    pub fn move_clamped(&self, x: usize, y: usize, dir: Action) -> (usize, usize) {
        let (dx, dy) = dir.delta();
        let nx = (x as i64 + dx).clamp(0, self.width as i64 - 1) as usize;
        let ny = (y as i64 + dy).clamp(0, self.height as i64 - 1) as usize;
        (nx, ny)
    }

    /// Executes one step. With probability `slip_prob` a direction other than
    /// `action` is executed (uniform over the remaining three).
    pub fn step<R: Rng>(&self, s: MOState, action: Action, rng: &mut R) -> Result<Transition, WorldError> {
        if s.t >= self.horizon {
            return Err(WorldError::EpisodeOver { t: s.t, horizon: self.horizon });
        }
        let executed = if rng.gen::<f64>() < self.slip_prob {
            let others: Vec<Action> =
                Action::ALL.iter().copied().filter(|&a| a != action).collect();
            others[rng.gen_range(0..3)]
        } else {
            action
        };
        let (nx, ny) = self.move_clamped(s.x, s.y, executed);
        let next = MOState { x: nx, y: ny, t: s.t + 1 };
        let terminal = next.t == self.horizon;
        let reward = self.reward_vector(MOState { x: nx, y: ny, t: next.t });
        Ok(Transition { state: s, action, next, terminal, reward })
    }
}

/// A serpentine road: full rows every four cells (always including row 0 and
/// the last row), linked by connector columns on alternating edges.
fn serpentine_road(width: usize, height: usize) -> Vec<bool> {
    let mut road = alloc::vec![false; width * height];
    let mut rows = Vec::new();
    let mut y = 0;
    while y < height {
        rows.push(y);
        y += 4;
    }
    if *rows.last().unwrap() != height - 1 {
        rows.push(height - 1);
    }
    for &ry in &rows {
        for x in 0..width {
            road[ry * width + x] = true;
        }
    }
    for (seg, pair) in rows.windows(2).enumerate() {
        let x = if seg % 2 == 0 { width - 1 } else { 0 };
        for cy in pair[0] + 1..pair[1] {
            road[cy * width + x] = true;
        }
    }
    road
}

/// Seeded draw of distinct hazard centers from the off-road cells.
fn place_hazards(
    road: &[bool],
    width: usize,
    height: usize,
    count: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut off_road: Vec<(usize, usize)> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter(|&(x, y)| !road[y * width + x])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, TAG_HAZARDS));
    let mut centers = Vec::with_capacity(count);
    for _ in 0..count.min(off_road.len()) {
        let k = rng.gen_range(0..off_road.len());
        centers.push(off_road.swap_remove(k));
    }
    centers
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = (a.0 as i64 - b.0 as i64).unsigned_abs();
    let dy = (a.1 as i64 - b.1 as i64).unsigned_abs();
    dx.max(dy) as f64
}

fn euclidean(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = (a.0 as i64 - b.0 as i64) as f64;
    let dy = (a.1 as i64 - b.1 as i64) as f64;
    (dx * dx + dy * dy).sqrt()
}

fn build_map(
    objective: usize,
    width: usize,
    height: usize,
    road: &[bool],
    hazards: &[(usize, usize)],
    size: GridSize,
) -> Vec<f64> {
    let mut map = alloc::vec![0.0; width * height];
    let road_cells: Vec<(usize, usize)> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter(|&(x, y)| road[y * width + x])
        .collect();
    let cx = (width - 1) as f64 / 2.0;
    let cy = (height - 1) as f64 / 2.0;
    for y in 0..height {
        for x in 0..width {
            let cell = (x, y);
            map[y * width + x] = match objective {
                // Stay on road: 1 on the road, falling off with Chebyshev distance.
                0 => {
                    let d = road_cells
                        .iter()
                        .map(|&rc| chebyshev(cell, rc))
                        .fold(f64::INFINITY, f64::min);
                    (1.0 - d / ROAD_FALLOFF).max(0.0)
                }
                // Avoid hazards: 0 at the nearest center, saturating to 1.
                1 => {
                    let d = hazards
                        .iter()
                        .map(|&hc| euclidean(cell, hc))
                        .fold(f64::INFINITY, f64::min);
                    (d / size.hazard_radius()).min(1.0)
                }
                // Move right.
                2 => x as f64 / (width - 1) as f64,
                // Move up (y = 0 is the top row).
                3 => (height - 1 - y) as f64 / (height - 1) as f64,
                // Toward the center row.
                4 => 1.0 - (y as f64 - cy).abs() / cy,
                // Toward the center column.
                5 => 1.0 - (x as f64 - cx).abs() / cx,
                _ => unreachable!("objective count validated at build"),
            };
        }
    }
    map
}

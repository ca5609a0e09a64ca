//! Deterministic desk-scale environments.
//!
//! Three environments share one state layout: an actuated part (the agent,
//! directly controlled) and an underactuated part (a pushable object, empty
//! where there is none). Observations are the concatenation of both,
//! normalized per dimension to `[-1, 1]` using the arena bounds.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Closed interval `[lo, hi]`.
pub type Interval = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Gridworld,
    Pointmass2d,
    Planarpush,
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvKind::Gridworld => "gridworld",
            EnvKind::Pointmass2d => "pointmass2d",
            EnvKind::Planarpush => "planarpush",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Side length of the gridworld.
    pub grid_size: usize,
    /// Blocked gridworld cells as `[x, y]`.
    pub walls: Vec<[usize; 2]>,
    /// Per-axis arena bounds of the continuous plane.
    pub arena_bounds: Vec<Interval>,
    pub action_dim: usize,
    pub max_episode_len: usize,
    /// Initialization intervals for every state dimension, actuated first.
    pub reset_region: Vec<Interval>,
    /// Displacement per unit action (continuous environments).
    pub step_scale: f64,
    pub agent_radius: f64,
    pub object_radius: f64,
    /// Gridworld actions with every component below this magnitude stay put.
    pub stay_deadzone: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::planarpush()
    }
}

impl EnvConfig {
    pub fn gridworld(grid_size: usize) -> Self {
        let hi = grid_size.saturating_sub(1) as f64;
        Self {
            kind: EnvKind::Gridworld,
            grid_size,
            walls: Vec::new(),
            arena_bounds: vec![[0.0, hi], [0.0, hi]],
            action_dim: 2,
            max_episode_len: 30,
            reset_region: vec![[0.0, hi], [0.0, hi]],
            step_scale: 1.0,
            agent_radius: 0.0,
            object_radius: 0.0,
            stay_deadzone: 0.2,
        }
    }

    pub fn pointmass2d() -> Self {
        Self {
            kind: EnvKind::Pointmass2d,
            grid_size: 0,
            walls: Vec::new(),
            arena_bounds: vec![[-0.3, 0.3], [-0.3, 0.3]],
            action_dim: 2,
            max_episode_len: 30,
            reset_region: vec![[-0.25, 0.25], [-0.25, 0.25]],
            step_scale: 0.03,
            agent_radius: 0.0,
            object_radius: 0.0,
            stay_deadzone: 0.0,
        }
    }

    pub fn planarpush() -> Self {
        Self {
            kind: EnvKind::Planarpush,
            grid_size: 0,
            walls: Vec::new(),
            arena_bounds: vec![[-0.25, 0.25], [-0.25, 0.25]],
            action_dim: 2,
            max_episode_len: 30,
            reset_region: vec![[-0.25, 0.25], [-0.25, 0.25], [-0.2, 0.2], [-0.2, 0.2]],
            step_scale: 0.03,
            agent_radius: 0.03,
            object_radius: 0.04,
            stay_deadzone: 0.0,
        }
    }

    /// Replaces the object initialization square with `[-half, half]²`.
    pub fn with_object_reset(mut self, half: f64) -> Self {
        if self.kind == EnvKind::Planarpush {
            self.reset_region.truncate(2);
            self.reset_region.push([-half, half]);
            self.reset_region.push([-half, half]);
        }
        self
    }

    pub fn actuated_dim(&self) -> usize {
        2
    }

    pub fn underactuated_dim(&self) -> usize {
        match self.kind {
            EnvKind::Planarpush => 2,
            _ => 0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actuated_dim() + self.underactuated_dim()
    }

    pub fn default_success_threshold(&self) -> f64 {
        match self.kind {
            EnvKind::Gridworld => 0.5,
            _ => 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.action_dim < 1 {
            return bad("action_dim must be at least 1".into());
        }
        if self.max_episode_len < 1 {
            return bad("max_episode_len must be at least 1".into());
        }
        if self.kind == EnvKind::Gridworld {
            if self.grid_size < 2 {
                return bad(format!(
                    "grid_size must be at least 2, got {}",
                    self.grid_size
                ));
            }
            if self.action_dim != 2 {
                return bad("gridworld actions are 2-dimensional".into());
            }
            if let Some(w) = self
                .walls
                .iter()
                .find(|w| w[0] >= self.grid_size || w[1] >= self.grid_size)
            {
                return bad(format!("wall {w:?} outside the grid"));
            }
            if self.walls.len() >= self.grid_size * self.grid_size {
                return bad("gridworld has no free cell".into());
            }
        } else if self.action_dim != 2 {
            return bad("continuous environments use 2-dimensional actions".into());
        }
        if self.arena_bounds.len() != 2 {
            return bad("arena_bounds needs one interval per plane axis".into());
        }
        if let Some(b) = self.arena_bounds.iter().find(|b| !(b[0] < b[1])) {
            return bad(format!("arena interval {b:?} must have lo < hi"));
        }
        if self.reset_region.len() != self.obs_dim() {
            return bad(format!(
                "reset_region needs {} intervals, got {}",
                self.obs_dim(),
                self.reset_region.len()
            ));
        }
        for (i, r) in self.reset_region.iter().enumerate() {
            let b = self.arena_bounds[i % 2];
            if r[0] > r[1] || r[0] < b[0] || r[1] > b[1] {
                return bad(format!(
                    "reset interval {r:?} must lie inside the arena {b:?}"
                ));
            }
        }
        if self.kind != EnvKind::Gridworld && !(self.step_scale > 0.0) {
            return bad("step_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub actuated: Vec<f64>,
    pub underactuated: Vec<f64>,
    pub time: usize,
}

impl EnvState {
    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.actuated.clone();
        c.extend_from_slice(&self.underactuated);
        c
    }
}

/// Normalized flat observation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Discrete gridworld moves; `x` grows to the right, `y` upwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GridMove {
    Right,
    Left,
    Up,
    Down,
    Stay,
}

impl GridMove {
    pub const ALL: [GridMove; 5] = [
        GridMove::Right,
        GridMove::Left,
        GridMove::Up,
        GridMove::Down,
        GridMove::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn offset(self) -> (i64, i64) {
        match self {
            GridMove::Right => (1, 0),
            GridMove::Left => (-1, 0),
            GridMove::Up => (0, 1),
            GridMove::Down => (0, -1),
            GridMove::Stay => (0, 0),
        }
    }

    /// A continuous action that discretizes to this move.
    pub fn representative(self) -> [f64; 2] {
        match self {
            GridMove::Right => [1.0, 0.0],
            GridMove::Left => [-1.0, 0.0],
            GridMove::Up => [0.0, 1.0],
            GridMove::Down => [0.0, -1.0],
            GridMove::Stay => [0.0, 0.0],
        }
    }

    /// Argmax of component magnitudes picks the axis, its sign the direction.
    /// Ties go to the x axis.
    pub fn from_action(action: &[f64], deadzone: f64) -> GridMove {
        let (ax, ay) = (action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0));
        let m = ax.abs().max(ay.abs());
        if m <= deadzone || m == 0.0 {
            GridMove::Stay
        } else if ax.abs() >= ay.abs() {
            if ax > 0.0 {
                GridMove::Right
            } else {
                GridMove::Left
            }
        } else if ay > 0.0 {
            GridMove::Up
        } else {
            GridMove::Down
        }
    }
}

/// A validated environment.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    blocked: Vec<bool>,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut blocked = vec![false; config.grid_size * config.grid_size];
        for w in &config.walls {
            blocked[w[1] * config.grid_size + w[0]] = true;
        }
        Ok(Self { config, blocked })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn kind(&self) -> EnvKind {
        self.config.kind
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    pub fn key_dim(&self) -> usize {
        self.config.actuated_dim()
    }

    pub fn is_free(&self, x: i64, y: i64) -> bool {
        let n = self.config.grid_size as i64;
        x >= 0 && y >= 0 && x < n && y < n && !self.blocked[(y * n + x) as usize]
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = rng::seeded(seed);
        let c = &self.config;
        let uniform = |rng: &mut rng::Rng, r: Interval| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..=r[1])
            }
        };
        match c.kind {
            EnvKind::Gridworld => {
                let r = &c.reset_region;
                let cells: Vec<(i64, i64)> = (0..c.grid_size as i64)
                    .flat_map(|y| (0..c.grid_size as i64).map(move |x| (x, y)))
                    .filter(|&(x, y)| {
                        self.is_free(x, y)
                            && (x as f64) >= r[0][0]
                            && (x as f64) <= r[0][1]
                            && (y as f64) >= r[1][0]
                            && (y as f64) <= r[1][1]
                    })
                    .collect();
                // An empty region falls back to any free cell.
                let (x, y) = if cells.is_empty() {
                    let free: Vec<_> = (0..c.grid_size as i64)
                        .flat_map(|y| (0..c.grid_size as i64).map(move |x| (x, y)))
                        .filter(|&(x, y)| self.is_free(x, y))
                        .collect();
                    free[rng.random_range(0..free.len())]
                } else {
                    cells[rng.random_range(0..cells.len())]
                };
                EnvState {
                    actuated: vec![x as f64, y as f64],
                    underactuated: Vec::new(),
                    time: 0,
                }
            }
            EnvKind::Pointmass2d => EnvState {
                actuated: c
                    .reset_region
                    .iter()
                    .map(|&r| uniform(&mut rng, r))
                    .collect(),
                underactuated: Vec::new(),
                time: 0,
            },
            EnvKind::Planarpush => {
                let object: Vec<f64> = c.reset_region[2..]
                    .iter()
                    .map(|&r| uniform(&mut rng, r))
                    .collect();
                let contact = c.agent_radius + c.object_radius;
                let mut agent = Vec::new();
                for _ in 0..1000 {
                    agent = c.reset_region[..2]
                        .iter()
                        .map(|&r| uniform(&mut rng, r))
                        .collect();
                    if dist(&agent, &object) >= contact {
                        break;
                    }
                }
                let mut state = EnvState {
                    actuated: agent,
                    underactuated: object,
                    time: 0,
                };
                self.resolve_contact(&mut state, &[0.0, 0.0]);
                state
            }
        }
    }

    /// Advances one step; rejects steps past the episode length.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<EnvState> {
        if state.time >= self.config.max_episode_len {
            return Err(Error::EpisodeTerminated(state.time));
        }
        let mut next = self.transition(state, action)?;
        next.time = state.time + 1;
        Ok(next)
    }

    /// Dynamics without the episode clock; `time` is copied unchanged.
    pub fn transition(&self, state: &EnvState, action: &[f64]) -> Result<EnvState> {
        if action.len() != self.config.action_dim {
            return Err(Error::shape("action", self.config.action_dim, action.len()));
        }
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let c = &self.config;
        let mut next = state.clone();
        match c.kind {
            EnvKind::Gridworld => {
                let (dx, dy) = GridMove::from_action(&a, c.stay_deadzone).offset();
                let x = state.actuated[0].round() as i64 + dx;
                let y = state.actuated[1].round() as i64 + dy;
                if self.is_free(x, y) {
                    next.actuated = vec![x as f64, y as f64];
                }
            }
            EnvKind::Pointmass2d => {
                for (i, p) in next.actuated.iter_mut().enumerate() {
                    *p = (*p + c.step_scale * a[i])
                        .clamp(c.arena_bounds[i][0], c.arena_bounds[i][1]);
                }
            }
            EnvKind::Planarpush => {
                for (i, p) in next.actuated.iter_mut().enumerate() {
                    *p = (*p + c.step_scale * a[i])
                        .clamp(c.arena_bounds[i][0], c.arena_bounds[i][1]);
                }
                self.resolve_contact(&mut next, &a);
            }
        }
        Ok(next)
    }

    /// Disc contact: an overlapping object is translated along the
    /// agent-to-object normal to tangency, then clipped to the arena. If the
    /// arena wall keeps the object from moving far enough, the agent is backed
    /// off instead so the discs never interpenetrate.
    fn resolve_contact(&self, state: &mut EnvState, action: &[f64]) {
        let c = &self.config;
        let contact = c.agent_radius + c.object_radius;
        let (p, o) = (&state.actuated, &state.underactuated);
        let gap = dist(p, o);
        if gap >= contact {
            return;
        }
        let normal = if gap > 1e-12 {
            [(o[0] - p[0]) / gap, (o[1] - p[1]) / gap]
        } else {
            let n = (action[0] * action[0] + action[1] * action[1]).sqrt();
            if n > 1e-12 {
                [action[0] / n, action[1] / n]
            } else {
                [1.0, 0.0]
            }
        };
        let mut obj = [p[0] + normal[0] * contact, p[1] + normal[1] * contact];
        for (i, v) in obj.iter_mut().enumerate() {
            *v = v.clamp(c.arena_bounds[i][0], c.arena_bounds[i][1]);
        }
        state.underactuated = obj.to_vec();
        let gap = dist(&state.actuated, &state.underactuated);
        if gap < contact - 1e-12 {
            let p = &state.actuated;
            let back = if gap > 1e-12 {
                [(p[0] - obj[0]) / gap, (p[1] - obj[1]) / gap]
            } else {
                [-normal[0], -normal[1]]
            };
            let mut agent = [obj[0] + back[0] * contact, obj[1] + back[1] * contact];
            for (i, v) in agent.iter_mut().enumerate() {
                *v = v.clamp(c.arena_bounds[i][0], c.arena_bounds[i][1]);
            }
            state.actuated = agent.to_vec();
        }
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        self.observe_coords(&state.actuated, &state.underactuated)
    }

    /// Observation of an arbitrary (actuated, underactuated) configuration.
    pub fn observe_coords(&self, actuated: &[f64], underactuated: &[f64]) -> Observation {
        let b = &self.config.arena_bounds;
        Observation(
            actuated
                .iter()
                .chain(underactuated)
                .enumerate()
                .map(|(i, &x)| {
                    let [lo, hi] = b[i % 2];
                    2.0 * (x - lo) / (hi - lo) - 1.0
                })
                .collect(),
        )
    }

    /// Inverse of [`Env::observe`]; the returned state has `time = 0`.
    pub fn denormalize(&self, obs: &[f64]) -> EnvState {
        let b = &self.config.arena_bounds;
        let coords: Vec<f64> = obs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let [lo, hi] = b[i % 2];
                (v + 1.0) * 0.5 * (hi - lo) + lo
            })
            .collect();
        let k = self.config.actuated_dim();
        EnvState {
            actuated: coords[..k].to_vec(),
            underactuated: coords[k..].to_vec(),
            time: 0,
        }
    }

    /// The component success is judged on: the object when there is one,
    /// otherwise the agent.
    pub fn task_component<'a>(&self, state: &'a EnvState) -> &'a [f64] {
        match self.config.kind {
            EnvKind::Planarpush => &state.underactuated,
            _ => &state.actuated,
        }
    }

    pub fn success(&self, state: &EnvState, goal: &EnvState, threshold: f64) -> bool {
        dist(self.task_component(state), self.task_component(goal)) <= threshold
    }

    pub fn actuated_key(&self, state: &EnvState) -> Vec<f64> {
        state.actuated.clone()
    }

    /// Number of free gridworld cells.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let n = self.config.grid_size;
        (0..n)
            .flat_map(|y| (0..n).map(move |x| (x, y)))
            .filter(|&(x, y)| !self.blocked[y * n + x])
            .collect()
    }

    pub fn grid_state(&self, x: usize, y: usize) -> EnvState {
        EnvState {
            actuated: vec![x as f64, y as f64],
            underactuated: Vec::new(),
            time: 0,
        }
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

//! Exact checks of the distance-learning core against tabular oracles.

use rand::Rng as _;

use super::{evaluate_tasks, SeedOutcome, TaskSet};
use crate::distance::DistanceScale;
use crate::dynamics::ExactModel;
use crate::env::{Env, EnvConfig};
use crate::error::Result;
use crate::oracle::{bfs_distance, check_identity, value_iteration, IdentityReport};
use crate::planner::{CemConfig, Mpc, QCost};
use crate::rng::Rng;

/// A gridworld of side `size` with up to a quarter of its cells walled.
pub fn random_gridworld(size: usize, rng: &mut Rng) -> EnvConfig {
    let mut cfg = EnvConfig::gridworld(size);
    let n_walls = rng.random_range(0..=size * size / 4);
    for _ in 0..n_walls {
        let w = [rng.random_range(0..size), rng.random_range(0..size)];
        if !cfg.walls.contains(&w) {
            cfg.walls.push(w);
        }
    }
    cfg
}

/// Value iteration with `(r_step, r_goal) = (0, 1)` on `n_worlds` random
/// gridworlds whose sides cycle through `2..=max_size`, each compared
/// with BFS over every reachable `(s, a, g)`.
pub fn identity_sweep(
    n_worlds: usize,
    max_size: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<(EnvConfig, IdentityReport)>> {
    let mut rng = crate::rng::seeded(seed);
    let sizes = (2..=max_size.max(2)).cycle();
    sizes
        .take(n_worlds)
        .map(|size| {
            let cfg = random_gridworld(size, &mut rng);
            let env = Env::new(cfg.clone())?;
            let q = value_iteration(&env, 0.8, 0.0, 1.0, 1e-10)?;
            Ok((cfg, check_identity(&q, &env, tol)?))
        })
        .collect()
}

/// Largest `|distance_of_q(Q_d) − d|` for `d = 0..=max_d`, where `Q_0 = r_goal`
/// and `Q_d = r_step + γ·Q_{d−1}`.
pub fn inversion_error(scale: &DistanceScale, max_d: usize) -> f64 {
    let mut q = scale.r_goal;
    let mut worst: f64 = 0.0;
    for d in 0..=max_d {
        worst = worst.max((scale.distance_of_q(q).steps - d as f64).abs());
        q = scale.r_step + scale.gamma * q;
    }
    worst
}

/// A single-row corridor of `len` cells inside a `len × len` grid.
pub fn chain(len: usize) -> EnvConfig {
    let mut cfg = EnvConfig::gridworld(len);
    cfg.walls = (1..len)
        .flat_map(|y| (0..len).map(move |x| [x, y]))
        .collect();
    cfg
}

/// Value iteration with shaped rewards on a corridor, checked against BFS.
pub fn chain_identity(len: usize, scale: &DistanceScale, tol: f64) -> Result<IdentityReport> {
    let env = Env::new(chain(len))?;
    let q = value_iteration(&env, scale.gamma, scale.r_step, scale.r_goal, 1e-12)?;
    check_identity(&q, &env, tol)
}

/// Every ordered pair of free cells at most `max_dist` BFS steps apart.
pub fn grid_pair_tasks(env: &Env, max_dist: usize) -> TaskSet {
    let cells = env.free_cells();
    let pairs = cells
        .iter()
        .flat_map(|&s| cells.iter().map(move |&g| (s, g)))
        .filter(|&(s, g)| bfs_distance(env, s, g).is_some_and(|d| d <= max_dist))
        .map(|(s, g)| (env.grid_state(s.0, s.1), env.grid_state(g.0, g.1)))
        .collect();
    TaskSet::from_pairs(env, pairs)
}

/// MPC with the tabular Q and the exact grid dynamics on every task of
/// [`grid_pair_tasks`].
pub fn oracle_planner(
    env_cfg: &EnvConfig,
    scale: &DistanceScale,
    max_dist: usize,
    cem: &CemConfig,
    seed: u64,
) -> Result<SeedOutcome> {
    let env = Env::new(env_cfg.clone())?;
    let table = value_iteration(&env, scale.gamma, scale.r_step, scale.r_goal, 1e-10)?;
    let model = ExactModel::new(env_cfg.clone())?;
    let cost = QCost { critic: &table };
    let tasks = grid_pair_tasks(&env, max_dist);
    evaluate_tasks(
        &env,
        &tasks,
        env_cfg.default_success_threshold(),
        seed,
        || Mpc::new(&model, &cost, cem.clone()),
    )
}

//! Exact gridworld references: BFS shortest paths, tabular value iteration on
//! the goal-conditioned MDP and the distance identity check.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2};

use crate::distance::{DistanceScale, GoalCritic};
use crate::env::{Env, EnvKind, GridMove};
use crate::error::{Error, Result};

pub type Cell = (usize, usize);

fn require_grid(env: &Env) -> Result<()> {
    if env.kind() != EnvKind::Gridworld {
        return Err(Error::Config(format!(
            "oracle needs a gridworld, got {}",
            env.kind()
        )));
    }
    Ok(())
}

/// Cell reached from `cell` by `mv` under the gridworld transition rule.
pub fn grid_next(env: &Env, cell: Cell, mv: GridMove) -> Cell {
    let (dx, dy) = mv.offset();
    let (x, y) = (cell.0 as i64 + dx, cell.1 as i64 + dy);
    if env.is_free(x, y) {
        (x as usize, y as usize)
    } else {
        cell
    }
}

/// Shortest step counts from every cell to `goal`, indexed `y·n + x`.
/// Blocked and disconnected cells are `None`.
pub fn bfs_to_goal(env: &Env, goal: Cell) -> Vec<Option<usize>> {
    let n = env.config().grid_size;
    let mut dist = vec![None; n * n];
    if !env.is_free(goal.0 as i64, goal.1 as i64) {
        return dist;
    }
    // The 4-neighbourhood is symmetric, so a forward search from the goal
    // gives distances to it.
    dist[goal.1 * n + goal.0] = Some(0);
    let mut queue = VecDeque::from([goal]);
    while let Some(c) = queue.pop_front() {
        let d = dist[c.1 * n + c.0].unwrap();
        for mv in GridMove::ALL {
            let nb = grid_next(env, c, mv);
            if dist[nb.1 * n + nb.0].is_none() {
                dist[nb.1 * n + nb.0] = Some(d + 1);
                queue.push_back(nb);
            }
        }
    }
    dist
}

pub fn bfs_distance(env: &Env, start: Cell, goal: Cell) -> Option<usize> {
    let n = env.config().grid_size;
    if !env.is_free(start.0 as i64, start.1 as i64) {
        return None;
    }
    bfs_to_goal(env, goal)[start.1 * n + start.0]
}

/// Exact goal-conditioned Q-table, indexed `(state cell, move, goal cell)`
/// with cells flattened as `y·n + x`.
#[derive(Clone, Debug)]
pub struct TabularQ {
    pub values: Vec<f64>,
    pub grid_size: usize,
    pub gamma: f64,
    pub r_step: f64,
    pub r_goal: f64,
    pub stay_deadzone: f64,
    /// Sup-norm change of each sweep.
    pub sweep_deltas: Vec<f64>,
}

const N_MOVES: usize = GridMove::ALL.len();

impl TabularQ {
    fn idx(&self, s: usize, a: usize, g: usize) -> usize {
        let cells = self.grid_size * self.grid_size;
        (g * cells + s) * N_MOVES + a
    }

    pub fn get(&self, s: Cell, mv: GridMove, g: Cell) -> f64 {
        let n = self.grid_size;
        self.values[self.idx(s.1 * n + s.0, mv.index(), g.1 * n + g.0)]
    }

    pub fn max_q(&self, s: Cell, g: Cell) -> (GridMove, f64) {
        let mut best = (GridMove::ALL[0], f64::NEG_INFINITY);
        for mv in GridMove::ALL {
            let q = self.get(s, mv, g);
            if q > best.1 {
                best = (mv, q);
            }
        }
        best
    }

    pub fn scale(&self) -> DistanceScale {
        DistanceScale {
            gamma: self.gamma,
            r_step: self.r_step,
            r_goal: self.r_goal,
        }
    }

    /// Nearest grid cell of a normalized observation, clamped to the grid.
    pub fn cell_of_obs(&self, obs: &[f64]) -> Cell {
        let hi = (self.grid_size - 1) as f64;
        let c = |v: f64| ((v + 1.0) * 0.5 * hi).round().clamp(0.0, hi) as usize;
        (c(obs[0]), c(obs[1]))
    }
}

/// Iterates the goal-terminating Bellman operator
/// `Q(s, a, g) = r_goal` if `a` leads into `g`, else
/// `r_step + γ·max_a′ Q(s′, a′, g)`, from zero until the sup-norm change
/// drops below `tol`.
pub fn value_iteration(
    env: &Env,
    gamma: f64,
    r_step: f64,
    r_goal: f64,
    tol: f64,
) -> Result<TabularQ> {
    require_grid(env)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma {gamma} outside (0, 1)")));
    }
    let n = env.config().grid_size;
    let cells = n * n;
    let next: Vec<[usize; N_MOVES]> = (0..cells)
        .map(|s| {
            GridMove::ALL.map(|mv| {
                let (x, y) = grid_next(env, (s % n, s / n), mv);
                y * n + x
            })
        })
        .collect();
    let mut q = TabularQ {
        values: vec![0.0; cells * cells * N_MOVES],
        grid_size: n,
        gamma,
        r_step,
        r_goal,
        stay_deadzone: env.config().stay_deadzone,
        sweep_deltas: Vec::new(),
    };
    let mut v = vec![0.0; cells];
    loop {
        let mut delta: f64 = 0.0;
        for g in 0..cells {
            let base = g * cells;
            for (s, nv) in v.iter_mut().enumerate() {
                *nv = q.values[(base + s) * N_MOVES..(base + s + 1) * N_MOVES]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            // Jacobi sweep: every update reads the previous table.
            for s in 0..cells {
                for (a, &nx) in next[s].iter().enumerate() {
                    let new = if nx == g {
                        r_goal
                    } else {
                        r_step + gamma * v[nx]
                    };
                    let i = (base + s) * N_MOVES + a;
                    delta = delta.max((new - q.values[i]).abs());
                    q.values[i] = new;
                }
            }
        }
        q.sweep_deltas.push(delta);
        if delta < tol || q.sweep_deltas.len() > 100_000 {
            break;
        }
    }
    Ok(q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub max_deviation: f64,
    /// `(state, move, goal)` with the largest deviation.
    pub worst: Option<(Cell, GridMove, Cell)>,
    pub checked: usize,
    /// Entries whose goal is unreachable after the action; excluded.
    pub unreachable: usize,
    /// Unreachable entries whose Q-value sits at or below `q_inf`.
    pub unreachable_flagged: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares `distance_of_q` of every free-cell table entry with the BFS
/// distance remaining after the action.
pub fn check_identity(table: &TabularQ, env: &Env, tol: f64) -> Result<IdentityReport> {
    require_grid(env)?;
    let scale = table.scale();
    let free = env.free_cells();
    let mut report = IdentityReport {
        max_deviation: 0.0,
        worst: None,
        checked: 0,
        unreachable: 0,
        unreachable_flagged: 0,
        tol,
        passed: true,
    };
    for &g in &free {
        let bfs = bfs_to_goal(env, g);
        for &s in &free {
            for mv in GridMove::ALL {
                let nx = grid_next(env, s, mv);
                let est = scale.distance_of_q(table.get(s, mv, g));
                match bfs[nx.1 * table.grid_size + nx.0] {
                    Some(d) => {
                        report.checked += 1;
                        let dev = (est.steps - d as f64).abs();
                        if dev > report.max_deviation
                            || (dev.is_nan() && report.max_deviation.is_finite())
                        {
                            report.max_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
                            report.worst = Some((s, mv, g));
                        }
                    }
                    None => {
                        report.unreachable += 1;
                        if est.clamped && est.steps.is_infinite() {
                            report.unreachable_flagged += 1;
                        }
                    }
                }
            }
        }
    }
    report.passed = report.max_deviation < tol;
    Ok(report)
}

impl GoalCritic for TabularQ {
    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn scale(&self) -> DistanceScale {
        TabularQ::scale(self)
    }

    fn q_batch(
        &self,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        goals: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        if obs.ncols() != 2 || goals.ncols() != 2 {
            return Err(Error::shape("tabular observation", 2, obs.ncols()));
        }
        if actions.ncols() != 2 {
            return Err(Error::shape("tabular action", 2, actions.ncols()));
        }
        Ok((0..obs.nrows())
            .map(|i| {
                let s = self.cell_of_obs(obs.row(i).as_slice().unwrap_or(&obs.row(i).to_vec()));
                let g = self.cell_of_obs(goals.row(i).as_slice().unwrap_or(&goals.row(i).to_vec()));
                let a = actions.row(i).to_vec();
                self.get(s, GridMove::from_action(&a, self.stay_deadzone), g)
            })
            .collect())
    }

    /// Representative action of the maximizing move; ties go to the first
    /// move in [`GridMove::ALL`].
    fn greedy_batch(&self, obs: ArrayView2<f64>, goals: ArrayView2<f64>) -> Result<Array2<f64>> {
        if obs.ncols() != 2 || goals.ncols() != 2 {
            return Err(Error::shape("tabular observation", 2, obs.ncols()));
        }
        let mut out = Array2::zeros((obs.nrows(), 2));
        for i in 0..obs.nrows() {
            let s = self.cell_of_obs(&obs.row(i).to_vec());
            let g = self.cell_of_obs(&goals.row(i).to_vec());
            let rep = self.max_q(s, g).0.representative();
            out[[i, 0]] = rep[0];
            out[[i, 1]] = rep[1];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use proptest::prelude::*;

    fn grid(n: usize, walls: &[[usize; 2]]) -> Env {
        let mut c = EnvConfig::gridworld(n);
        c.walls = walls.to_vec();
        Env::new(c).unwrap()
    }

    /// Shortest path length by exhaustive depth-limited enumeration.
    fn brute_force(env: &Env, start: Cell, goal: Cell, limit: usize) -> Option<usize> {
        let mut frontier = vec![start];
        for d in 0..=limit {
            if frontier.contains(&goal) {
                return Some(d);
            }
            let mut next: Vec<Cell> = frontier
                .iter()
                .flat_map(|&c| GridMove::ALL.map(|m| grid_next(env, c, m)))
                .collect();
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        None
    }

    #[test]
    fn bfs_examples() {
        let open = grid(3, &[]);
        assert_eq!(bfs_distance(&open, (1, 1), (1, 1)), Some(0));
        assert_eq!(bfs_distance(&open, (0, 0), (2, 2)), Some(4));
    }

    #[test]
    fn wall_with_gap_detour() {
        // Column x = 2 blocked except y = 4.
        let walls: Vec<[usize; 2]> = (0..4).map(|y| [2, y]).collect();
        let env = grid(5, &walls);
        let d = bfs_distance(&env, (0, 0), (4, 0)).unwrap();
        assert_eq!(d, 12);
        assert_eq!(brute_force(&env, (0, 0), (4, 0), 12), Some(12));
        for s in env.free_cells() {
            for g in env.free_cells() {
                assert_eq!(bfs_distance(&env, s, g), brute_force(&env, s, g, 12));
            }
        }
    }

    #[test]
    fn value_iteration_examples() {
        let env = grid(4, &[]);
        let q = value_iteration(&env, 0.8, 1.0, 10.0, 1e-12).unwrap();
        assert_eq!(q.get((0, 0), GridMove::Right, (1, 0)), 10.0);
        // Two cells away: one step, then the terminal reward.
        assert!((q.get((0, 0), GridMove::Right, (2, 0)) - 9.0).abs() < 1e-9);
        let ind = value_iteration(&env, 0.8, 0.0, 1.0, 1e-12).unwrap();
        assert!((ind.get((0, 0), GridMove::Up, (3, 3)) - 0.8f64.powi(5)).abs() < 1e-9);
    }

    #[test]
    fn contraction_per_sweep() {
        let env = grid(5, &[[2, 2], [1, 3]]);
        let q = value_iteration(&env, 0.8, 1.0, 10.0, 1e-10).unwrap();
        for w in q.sweep_deltas.windows(2) {
            assert!(w[1] <= 0.8 * w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn identity_holds_for_both_reward_schemes() {
        let env = grid(5, &[[2, 0], [2, 1], [2, 2]]);
        for (rs, rg) in [(0.0, 1.0), (1.0, 10.0)] {
            let q = value_iteration(&env, 0.8, rs, rg, 1e-10).unwrap();
            let r = check_identity(&q, &env, 1e-6).unwrap();
            assert!(r.passed, "{r:?}");
            assert_eq!(r.unreachable, 0);
        }
    }

    #[test]
    fn unreachable_goals_are_flagged() {
        // A wall column without a gap splits the grid.
        let walls: Vec<[usize; 2]> = (0..4).map(|y| [2, y]).collect();
        let env = grid(4, &walls);
        let q = value_iteration(&env, 0.8, 0.0, 1.0, 1e-10).unwrap();
        let r = check_identity(&q, &env, 1e-6).unwrap();
        assert!(r.passed);
        assert!(r.unreachable > 0);
        assert_eq!(r.unreachable, r.unreachable_flagged);
    }

    #[test]
    fn breach_names_worst_triple() {
        let env = grid(3, &[]);
        let mut q = value_iteration(&env, 0.8, 1.0, 10.0, 1e-10).unwrap();
        let i = q.idx(0, GridMove::Up.index(), 8);
        q.values[i] -= 0.5;
        let r = check_identity(&q, &env, 1e-6).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, Some(((0, 0), GridMove::Up, (2, 2))));
    }

    #[test]
    fn tabular_greedy_moves_goalward() {
        let env = grid(4, &[]);
        let q = value_iteration(&env, 0.8, 1.0, 10.0, 1e-10).unwrap();
        let s = env.observe(&env.grid_state(0, 0)).0;
        let g = env.observe(&env.grid_state(3, 0)).0;
        let a = q.greedy_action(&s, &g).unwrap();
        assert_eq!(GridMove::from_action(&a, 0.2), GridMove::Right);
        assert_eq!(
            q.q_value(&s, &a, &g).unwrap(),
            q.get((0, 0), GridMove::Right, (3, 0))
        );
    }

    fn random_walls() -> impl Strategy<Value = (usize, Vec<[usize; 2]>)> {
        (2usize..=8).prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0..n, 0..n).prop_map(|(x, y)| [x, y]), 0..n * n / 4),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bfs_symmetric((n, walls) in random_walls(), seed in 0u64..1000) {
            let env = grid(n, &walls);
            let free = env.free_cells();
            prop_assume!(free.len() >= 2);
            let a = free[(seed as usize) % free.len()];
            let b = free[(seed as usize * 7 + 3) % free.len()];
            prop_assert_eq!(bfs_distance(&env, a, b), bfs_distance(&env, b, a));
        }

        #[test]
        fn identity_on_random_walls((n, walls) in random_walls()) {
            let env = grid(n, &walls);
            prop_assume!(!env.free_cells().is_empty());
            let q = value_iteration(&env, 0.8, 0.0, 1.0, 1e-10).unwrap();
            let r = check_identity(&q, &env, 1e-6).unwrap();
            prop_assert!(r.passed, "{:?}", r);
        }
    }
}

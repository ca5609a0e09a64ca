use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::distance::GoalCritic;
use crate::env::{Env, EnvKind, Interval};
use crate::error::{Error, Result};
use crate::oracle::bfs_distance;

/// `resolution` evenly spaced points from `lo` to `hi` inclusive.
pub fn sweep_axis(bounds: Interval, resolution: usize) -> Vec<f64> {
    match resolution {
        0 => Vec::new(),
        1 => vec![0.5 * (bounds[0] + bounds[1])],
        n => (0..n)
            .map(|i| bounds[0] + (bounds[1] - bounds[0]) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Distance from every swept configuration to `goal_obs`, as a
/// `resolution × resolution` matrix indexed `[y][x]`.
///
/// With an object in the scene the object is swept and the agent held at
/// `fixed_actuated`; otherwise the agent itself is swept. Gridworld wall cells
/// come out as NaN.
pub fn heatmap(
    env: &Env,
    goal_obs: &[f64],
    resolution: usize,
    fixed_actuated: &[f64],
    distance: impl Fn(ArrayView2<f64>, &[f64]) -> Result<Vec<f64>>,
) -> Result<Array2<f64>> {
    if resolution == 0 {
        return Err(Error::Config("heatmap resolution must be positive".into()));
    }
    if goal_obs.len() != env.obs_dim() {
        return Err(Error::shape("heatmap goal", env.obs_dim(), goal_obs.len()));
    }
    let b = &env.config().arena_bounds;
    let (xs, ys) = (sweep_axis(b[0], resolution), sweep_axis(b[1], resolution));
    let has_object = env.kind() == EnvKind::Planarpush;
    if has_object && fixed_actuated.len() != 2 {
        return Err(Error::shape(
            "fixed actuated position",
            2,
            fixed_actuated.len(),
        ));
    }
    let mut obs = Vec::with_capacity(resolution * resolution * env.obs_dim());
    let mut blocked = Vec::with_capacity(resolution * resolution);
    for &y in &ys {
        for &x in &xs {
            let o = if has_object {
                env.observe_coords(fixed_actuated, &[x, y])
            } else {
                env.observe_coords(&[x, y], &[])
            };
            obs.extend(o.0);
            blocked.push(
                env.kind() == EnvKind::Gridworld
                    && !env.is_free(x.round() as i64, y.round() as i64),
            );
        }
    }
    let obs =
        Array2::from_shape_vec((resolution * resolution, env.obs_dim()), obs).expect("sweep rows");
    let d = distance(obs.view(), goal_obs)?;
    if d.len() != blocked.len() {
        return Err(Error::shape("heatmap distances", blocked.len(), d.len()));
    }
    let cells = d
        .into_iter()
        .zip(blocked)
        .map(|(v, w)| if w { f64::NAN } else { v })
        .collect();
    Ok(Array2::from_shape_vec((resolution, resolution), cells).expect("square matrix"))
}

/// `(row, col)` of the smallest non-NaN entry; the first one on ties.
pub fn heatmap_argmin(m: &Array2<f64>) -> Option<(usize, usize)> {
    m.indexed_iter()
        .filter(|(_, v)| !v.is_nan())
        .fold(
            None,
            |best: Option<((usize, usize), f64)>, (ix, &v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((ix, v)),
            },
        )
        .map(|(ix, _)| ix)
}

/// Comma-separated rows, top row first as stored.
pub fn write_csv(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Learned step counts from the zero-action value. Values above the goal
/// reward extrapolate below zero instead of clamping, so the matrix keeps
/// its ordering near the goal.
pub fn critic_distance<C: GoalCritic>(
    critic: &C,
) -> impl Fn(ArrayView2<f64>, &[f64]) -> Result<Vec<f64>> + '_ {
    move |obs, goal| {
        let goals = Array2::from_shape_fn((obs.nrows(), goal.len()), |(_, j)| goal[j]);
        let s = critic.scale();
        let q_inf = s.q_inf();
        Ok(critic
            .hold_value_batch(obs, goals.view())?
            .iter()
            .map(|&q| {
                if q > q_inf {
                    ((q - q_inf) / (s.r_goal - q_inf)).ln() / s.gamma.ln()
                } else {
                    f64::INFINITY
                }
            })
            .collect())
    }
}

/// Exact shortest-path distances on a gridworld; unreachable cells are
/// infinite.
pub fn oracle_distance(env: &Env) -> impl Fn(ArrayView2<f64>, &[f64]) -> Result<Vec<f64>> + '_ {
    move |obs, goal| {
        if env.kind() != EnvKind::Gridworld {
            return Err(Error::Config(
                "the oracle distance exists only on gridworlds".into(),
            ));
        }
        let cell = |o: &[f64]| {
            let s = env.denormalize(o);
            (
                s.actuated[0].round() as usize,
                s.actuated[1].round() as usize,
            )
        };
        let g = cell(goal);
        Ok(obs
            .rows()
            .into_iter()
            .map(|o| {
                let o = o.to_vec();
                bfs_distance(env, cell(&o), g).map_or(f64::INFINITY, |d| d as f64)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::oracle::value_iteration;

    #[test]
    fn oracle_heatmap_is_bfs_with_minimum_at_goal() {
        let mut cfg = EnvConfig::gridworld(5);
        cfg.walls = vec![[2, 1], [2, 2], [2, 3]];
        let env = Env::new(cfg).unwrap();
        let goal = env.observe(&env.grid_state(3, 2)).0;
        let m = heatmap(&env, &goal, 5, &[], oracle_distance(&env)).unwrap();
        assert_eq!(m.dim(), (5, 5));
        assert_eq!(heatmap_argmin(&m), Some((2, 3)));
        assert_eq!(m[[2, 3]], 0.0);
        assert!(m[[2, 2]].is_nan());
        assert_eq!(m[[2, 1]], 6.0);
    }

    #[test]
    fn tabular_hold_distance_matches_bfs() {
        let env = Env::new(EnvConfig::gridworld(4)).unwrap();
        let table = value_iteration(&env, 0.8, 1.0, 10.0, 1e-12).unwrap();
        let goal = env.observe(&env.grid_state(0, 3)).0;
        let learned = heatmap(&env, &goal, 4, &[], critic_distance(&table)).unwrap();
        let exact = heatmap(&env, &goal, 4, &[], oracle_distance(&env)).unwrap();
        for (a, b) in learned.iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn object_sweep_holds_agent_fixed() {
        let env = Env::new(EnvConfig::planarpush()).unwrap();
        let goal = env.observe_coords(&[0.1, 0.1], &[0.0, 0.0]).0;
        let m = heatmap(&env, &goal, 7, &[0.2, -0.2], |obs, g| {
            Ok(obs
                .rows()
                .into_iter()
                .map(|o| {
                    ((o[2] - g[2]).powi(2) + (o[3] - g[3]).powi(2)).sqrt() + (o[0] - 0.8).abs()
                })
                .collect())
        })
        .unwrap();
        assert_eq!(m.dim(), (7, 7));
        assert_eq!(heatmap_argmin(&m), Some((3, 3)));
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_csv(&ndarray::array![[1.0, 2.0], [3.0, f64::NAN]], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "1,2\n3,NaN\n");
    }

    #[test]
    fn axis_endpoints() {
        assert_eq!(sweep_axis([0.0, 4.0], 5), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sweep_axis([-1.0, 1.0], 1), vec![0.0]);
    }
}

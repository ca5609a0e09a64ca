use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::{KnnIndex, OfflineDataset};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalSource {
    Reached,
    Negative,
}

/// Transitions paired with goals, ready for Q-learning.
#[derive(Clone, Debug)]
pub struct RelabeledBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub goals: Array2<f64>,
    /// True iff the goal is the reached state at offset 1.
    pub terminal: Vec<bool>,
    pub reward: Vec<f64>,
    pub source: Vec<GoalSource>,
}

impl RelabeledBatch {
    pub fn len(&self) -> usize {
        self.terminal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminal.is_empty()
    }

    pub fn count(&self, source: GoalSource) -> usize {
        self.source.iter().filter(|&&s| s == source).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    /// Geometric parameter for reached-goal offsets.
    pub p: f64,
    /// Fraction of rows relabeled with reached goals.
    pub mix: f64,
    pub r_step: f64,
    pub r_goal: f64,
    /// Negatives are drawn from this many nearest neighbours.
    pub knn_k: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            batch_size: 64,
            p: 0.3,
            mix: 0.5,
            r_step: 1.0,
            r_goal: 10.0,
            knn_k: 16,
        }
    }
}

/// Unclamped offset `Δ ~ Geom(p)` on `{1, 2, ...}`.
pub fn sample_geometric_offset(p: f64, rng: &mut Rng) -> usize {
    if p >= 1.0 {
        return 1;
    }
    // rand_distr counts failures before the first success, support {0, 1, ...}.
    let failures = Geometric::new(p).expect("0 < p < 1").sample(rng);
    1 + failures.min(usize::MAX as u64 - 1) as usize
}

/// Offset to the reached goal for the transition at `t`, clamped to the last
/// observation of a trajectory with `traj_len` transitions.
pub fn sample_reached_goal(traj_len: usize, t: usize, p: f64, rng: &mut Rng) -> usize {
    debug_assert!(t < traj_len);
    sample_geometric_offset(p, rng).min(traj_len - t)
}

/// Rows are drawn uniformly over trajectories, then uniformly over their
/// timesteps. The first `round(mix · batch_size)` rows get reached goals, the
/// rest negatives mined by actuated-key similarity from other trajectories
/// (`index = None` disables mining and relabels every row with reached goals).
pub fn make_batch(
    dataset: &OfflineDataset,
    index: Option<&KnnIndex>,
    spec: &BatchSpec,
    rng: &mut Rng,
) -> Result<RelabeledBatch> {
    if !(spec.p > 0.0 && spec.p <= 1.0) {
        return Err(Error::Config(format!(
            "geometric p {} outside (0, 1]",
            spec.p
        )));
    }
    if !(0.0..=1.0).contains(&spec.mix) {
        return Err(Error::Config(format!("mix {} outside [0, 1]", spec.mix)));
    }
    let n = spec.batch_size;
    let n_reached = match index {
        Some(_) => (spec.mix * n as f64).round() as usize,
        None => n,
    };
    let (od, ad) = (dataset.obs_dim(), dataset.action_dim());
    let mut obs = Array2::zeros((n, od));
    let mut actions = Array2::zeros((n, ad));
    let mut next_obs = Array2::zeros((n, od));
    let mut goals = Array2::zeros((n, od));
    let mut terminal = Vec::with_capacity(n);
    let mut reward = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    let fill = |dst: &mut Array2<f64>, row: usize, src: &[f32]| {
        for (d, &s) in dst.row_mut(row).iter_mut().zip(src) {
            *d = f64::from(s);
        }
    };
    for row in 0..n {
        let ti = rng.random_range(0..dataset.trajectories.len());
        let traj = &dataset.trajectories[ti];
        let t = rng.random_range(0..traj.len());
        fill(&mut obs, row, traj.obs(t));
        fill(&mut actions, row, traj.action(t));
        fill(&mut next_obs, row, traj.obs(t + 1));
        let negative = if row >= n_reached {
            let key: Vec<f64> = traj.key(t).iter().map(|&v| f64::from(v)).collect();
            index.and_then(|idx| idx.sample_negative_goal(&key, spec.knn_k, ti, rng))
        } else {
            None
        };
        match negative {
            Some((gi, gt)) => {
                fill(&mut goals, row, dataset.trajectories[gi].obs(gt));
                terminal.push(false);
                reward.push(spec.r_step);
                source.push(GoalSource::Negative);
            }
            None => {
                let delta = sample_reached_goal(traj.len(), t, spec.p, rng);
                fill(&mut goals, row, traj.obs(t + delta));
                terminal.push(delta == 1);
                reward.push(if delta == 1 { spec.r_goal } else { spec.r_step });
                source.push(GoalSource::Reached);
            }
        }
    }
    Ok(RelabeledBatch {
        obs,
        actions,
        next_obs,
        goals,
        terminal,
        reward,
        source,
    })
}

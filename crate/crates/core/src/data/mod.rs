//! Offline data: random collection, storage, goal relabeling and batching.

mod io;
mod knn;
mod relabel;

pub use io::{blob_path, load, save, DATASET_VERSION};
pub use knn::KnnIndex;
pub use relabel::{
    make_batch, sample_geometric_offset, sample_reached_goal, BatchSpec, GoalSource, RelabeledBatch,
};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{Env, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// One episode. Values are kept at f32 precision, the precision of the
/// on-disk format, so that storage round trips are lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub key_dim: usize,
    /// `(T + 1) × obs_dim`, row-major.
    pub observations: Vec<f32>,
    /// `T × action_dim`.
    pub actions: Vec<f32>,
    /// `(T + 1) × key_dim`.
    pub actuated_keys: Vec<f32>,
    /// Raw simulator states, when collected in-process. Not persisted.
    pub env_states: Option<Vec<EnvState>>,
}

impl Trajectory {
    pub fn new(obs_dim: usize, action_dim: usize, key_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            key_dim,
            observations: Vec::new(),
            actions: Vec::new(),
            actuated_keys: Vec::new(),
            env_states: None,
        }
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len() / self.action_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs(&self, t: usize) -> &[f32] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &[f32] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn key(&self, t: usize) -> &[f32] {
        &self.actuated_keys[t * self.key_dim..(t + 1) * self.key_dim]
    }

    pub fn check(&self) -> Result<()> {
        let t = self.len();
        if self.actions.len() != t * self.action_dim {
            return Err(Error::shape(
                "trajectory actions",
                t * self.action_dim,
                self.actions.len(),
            ));
        }
        if self.observations.len() != (t + 1) * self.obs_dim {
            return Err(Error::shape(
                "trajectory observations",
                (t + 1) * self.obs_dim,
                self.observations.len(),
            ));
        }
        if self.actuated_keys.len() != (t + 1) * self.key_dim {
            return Err(Error::shape(
                "trajectory keys",
                (t + 1) * self.key_dim,
                self.actuated_keys.len(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    pub env_config: EnvConfig,
    pub collection_seed: u64,
}

impl OfflineDataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        env_config: EnvConfig,
        collection_seed: u64,
    ) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::EmptyDataset)?;
        let dims = (first.obs_dim, first.action_dim, first.key_dim);
        for t in &trajectories {
            t.check()?;
            if (t.obs_dim, t.action_dim, t.key_dim) != dims {
                return Err(Error::Config("trajectories have mixed dimensions".into()));
            }
            if t.len() > env_config.max_episode_len {
                return Err(Error::Config(format!(
                    "trajectory of length {} exceeds max_episode_len {}",
                    t.len(),
                    env_config.max_episode_len
                )));
            }
        }
        Ok(Self {
            trajectories,
            env_config,
            collection_seed,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories[0].obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.trajectories[0].action_dim
    }

    pub fn key_dim(&self) -> usize {
        self.trajectories[0].key_dim
    }

    pub fn total_observations(&self) -> usize {
        self.trajectories.iter().map(|t| t.len() + 1).sum()
    }

    pub fn total_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Drops in-memory simulator states (what a storage round trip yields).
    pub fn without_states(&self) -> Self {
        let mut d = self.clone();
        for t in &mut d.trajectories {
            t.env_states = None;
        }
        d
    }

    /// Shuffles trajectories with `seed` and cuts them into consecutive parts
    /// sized by `fractions`. The last part takes the remainder; no part is
    /// left empty while trajectories remain.
    pub fn split(&self, fractions: &[f64], seed: u64) -> Result<Vec<OfflineDataset>> {
        let n = self.trajectories.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::seeded(seed));
        let mut parts = Vec::new();
        let mut start = 0;
        for (i, f) in fractions.iter().enumerate() {
            let end = if i + 1 == fractions.len() {
                n
            } else {
                let want = ((f * n as f64).round() as usize).max(1);
                (start + want).min(n.saturating_sub(fractions.len() - 1 - i))
            };
            let trajs: Vec<Trajectory> = order[start..end.max(start)]
                .iter()
                .map(|&j| self.trajectories[j].clone())
                .collect();
            parts.push(OfflineDataset::new(
                trajs,
                self.env_config.clone(),
                self.collection_seed,
            )?);
            start = end.max(start);
        }
        Ok(parts)
    }
}

/// Temporally correlated Gaussian exploration noise:
/// `x_t = β·u_t + (1 − β)·x_{t−1}` with `u_t ~ N(0, diag(stdev²))`, `x_{−1} = 0`.
#[derive(Clone, Debug)]
pub struct FilteredNoise {
    beta: f64,
    stdev: Vec<f64>,
    prev: Vec<f64>,
}

impl FilteredNoise {
    pub fn new(stdev: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("filter beta {beta} outside (0, 1]")));
        }
        let prev = vec![0.0; stdev.len()];
        Ok(Self { beta, stdev, prev })
    }

    /// Next unclipped filtered sample.
    pub fn sample(&mut self, rng: &mut Rng) -> Vec<f64> {
        for (x, s) in self.prev.iter_mut().zip(&self.stdev) {
            let u: f64 = StandardNormal.sample(rng);
            *x = filter_step(*x, s * u, self.beta);
        }
        self.prev.clone()
    }
}

pub fn filter_step(prev: f64, innovation: f64, beta: f64) -> f64 {
    beta * innovation + (1.0 - beta) * prev
}

/// Runs the filtered random policy for `n_episodes` full-length episodes.
/// Episode `i` uses seeds derived from `(seed, i)` only, so collection is
/// deterministic regardless of how episodes are scheduled.
pub fn collect_random(
    env_config: &EnvConfig,
    n_episodes: usize,
    stdev: &[f64],
    beta: f64,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_episodes == 0 {
        return Err(Error::EmptyDataset);
    }
    let env = Env::new(env_config.clone())?;
    if stdev.len() != env.action_dim() {
        return Err(Error::shape(
            "collection stdev",
            env.action_dim(),
            stdev.len(),
        ));
    }
    FilteredNoise::new(stdev.to_vec(), beta)?;
    let trajectories = (0..n_episodes as u64)
        .map(|ep| collect_episode(&env, stdev, beta, seed, ep))
        .collect::<Result<Vec<_>>>()?;
    OfflineDataset::new(trajectories, env_config.clone(), seed)
}

fn collect_episode(
    env: &Env,
    stdev: &[f64],
    beta: f64,
    seed: u64,
    episode: u64,
) -> Result<Trajectory> {
    let mut rng = rng::derived(seed, 2 * episode + 1);
    let mut noise = FilteredNoise::new(stdev.to_vec(), beta)?;
    let mut state = env.reset(rng::derive_seed(seed, 2 * episode));
    let mut traj = Trajectory::new(env.obs_dim(), env.action_dim(), env.key_dim());
    let mut states = vec![state.clone()];
    push_state(env, &mut traj, &state);
    for _ in 0..env.config().max_episode_len {
        let action: Vec<f64> = noise
            .sample(&mut rng)
            .into_iter()
            .map(|x| x.clamp(-1.0, 1.0))
            .collect();
        // The stored (f32) action is the one executed.
        let action: Vec<f64> = action.iter().map(|&a| f64::from(a as f32)).collect();
        state = env.step(&state, &action)?;
        traj.actions.extend(action.iter().map(|&a| a as f32));
        push_state(env, &mut traj, &state);
        states.push(state.clone());
    }
    traj.env_states = Some(states);
    Ok(traj)
}

fn push_state(env: &Env, traj: &mut Trajectory, state: &EnvState) {
    traj.observations
        .extend(env.observe(state).0.iter().map(|&v| v as f32));
    traj.actuated_keys
        .extend(env.actuated_key(state).iter().map(|&v| v as f32));
}

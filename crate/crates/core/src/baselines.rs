//! Comparison methods on the shared infrastructure: goal-conditioned
//! behaviour cloning, temporal-distance regression, the observation L2 cost
//! and greedy Q-shooting.

use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::approx::{load_mlp, save_mlp, Activation, AdamConfig, AdamState, Mlp};
use crate::data::OfflineDataset;
use crate::distance::GoalCritic;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::planner::{Controller, PlanCost};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcbcConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
}

impl Default for GcbcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 3],
            batch_size: 32,
            train_steps: 20_000,
            learning_rate: 3e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    pub hidden: Vec<usize>,
    pub maxdist: usize,
    pub batch_size: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 3],
            maxdist: 10,
            batch_size: 32,
            train_steps: 20_000,
            learning_rate: 3e-4,
        }
    }
}

/// Draws `(trajectory, t_i, t_g)` with `t_i` uniform over action steps and
/// `t_g` uniform over the later observations of the same trajectory.
fn sample_pair(dataset: &OfflineDataset, rng: &mut Rng) -> (usize, usize, usize) {
    let ti = rng.random_range(0..dataset.trajectories.len());
    let len = dataset.trajectories[ti].len();
    let t = rng.random_range(0..len);
    let g = rng.random_range(t + 1..=len);
    (ti, t, g)
}

fn check_pairs(dataset: &OfflineDataset) -> Result<()> {
    if dataset.trajectories.iter().any(|t| t.is_empty()) {
        return Err(Error::Config(
            "goal pairs need trajectories with at least one transition".into(),
        ));
    }
    Ok(())
}

fn to_f64(v: &[f32]) -> impl Iterator<Item = f64> + '_ {
    v.iter().map(|&x| f64::from(x))
}

fn mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len() as f64 / pred.ncols() as f64;
    let err = pred - target;
    let loss = err.mapv(|e| e * e).sum() / n;
    (loss, err * (2.0 / n))
}

#[derive(Clone, Debug)]
pub struct GcbcPolicy {
    pub net: Mlp,
    pub adam: AdamState,
}

impl GcbcPolicy {
    pub fn new(obs_dim: usize, action_dim: usize, cfg: &GcbcConfig, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![2 * obs_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(action_dim);
        let net = Mlp::new(&sizes, Activation::Tanh, rng)?;
        Ok(Self {
            adam: AdamState::new(&net, AdamConfig::with_lr(cfg.learning_rate)),
            net,
        })
    }

    pub fn act_batch(&self, obs: ArrayView2<f64>, goals: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net
            .forward_batch(concatenate![Axis(1), obs, goals].view())
    }

    pub fn act(&self, obs: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        let mut x = obs.to_vec();
        x.extend_from_slice(goal);
        self.net.forward(&x)
    }

    /// One regression step of `a_{t_i}` on `(s_{t_i}, s_{t_g})`.
    pub fn train_step(
        &mut self,
        dataset: &OfflineDataset,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        check_pairs(dataset)?;
        let (od, ad) = (dataset.obs_dim(), dataset.action_dim());
        let mut x = Array2::zeros((batch_size, 2 * od));
        let mut y = Array2::zeros((batch_size, ad));
        for row in 0..batch_size {
            let (ti, t, g) = sample_pair(dataset, rng);
            let traj = &dataset.trajectories[ti];
            for (d, v) in x
                .row_mut(row)
                .iter_mut()
                .zip(to_f64(traj.obs(t)).chain(to_f64(traj.obs(g))))
            {
                *d = v;
            }
            for (d, v) in y.row_mut(row).iter_mut().zip(to_f64(traj.action(t))) {
                *d = v;
            }
        }
        let tape = self.net.forward_tape(x.view())?;
        let (loss, up) = mse_grad(tape.output(), &y);
        let (grads, _) = self.net.backward(&tape, up.view())?;
        self.adam.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_mlp(&self.net, dir, "gcbc", self.adam.step, &[])
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (net, step) = load_mlp(dir, "gcbc")?;
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step = step;
        Ok(Self { net, adam })
    }
}

pub fn gcbc_train(
    dataset: &OfflineDataset,
    policy: &mut GcbcPolicy,
    steps: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut loss = f64::NAN;
    for _ in 0..steps {
        loss = policy.train_step(dataset, batch_size, rng)?;
    }
    Ok(loss)
}

/// Closed-loop rollout of a behaviour-cloned policy.
pub struct GcbcController<'a>(pub &'a GcbcPolicy);

impl Controller for GcbcController<'_> {
    fn act(
        &mut self,
        obs: &[f64],
        goal: &[f64],
        _remaining: usize,
        _rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.0.act(obs, goal)?])
    }
}

/// `min(t_g − t_i, maxdist)`.
pub fn temporal_label(t_i: usize, t_g: usize, maxdist: usize) -> Result<usize> {
    if t_g <= t_i {
        return Err(Error::Config(format!(
            "goal step {t_g} must follow start step {t_i}"
        )));
    }
    Ok((t_g - t_i).min(maxdist))
}

#[derive(Clone, Debug)]
pub struct TemporalRegressor {
    pub net: Mlp,
    pub adam: AdamState,
    pub maxdist: usize,
}

impl TemporalRegressor {
    pub fn new(obs_dim: usize, cfg: &TemporalConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.maxdist == 0 {
            return Err(Error::Config("maxdist must be at least 1".into()));
        }
        let mut sizes = vec![2 * obs_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let net = Mlp::new(&sizes, Activation::Identity, rng)?;
        Ok(Self {
            adam: AdamState::new(&net, AdamConfig::with_lr(cfg.learning_rate)),
            net,
            maxdist: cfg.maxdist,
        })
    }

    pub fn predict_batch(
        &self,
        obs: ArrayView2<f64>,
        goals: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        Ok(self
            .net
            .forward_batch(concatenate![Axis(1), obs, goals].view())?
            .column(0)
            .to_owned())
    }

    pub fn train_step(
        &mut self,
        dataset: &OfflineDataset,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        check_pairs(dataset)?;
        let od = dataset.obs_dim();
        let mut x = Array2::zeros((batch_size, 2 * od));
        let mut y = Array2::zeros((batch_size, 1));
        for row in 0..batch_size {
            let (ti, t, g) = sample_pair(dataset, rng);
            let traj = &dataset.trajectories[ti];
            for (d, v) in x
                .row_mut(row)
                .iter_mut()
                .zip(to_f64(traj.obs(t)).chain(to_f64(traj.obs(g))))
            {
                *d = v;
            }
            y[[row, 0]] = temporal_label(t, g, self.maxdist)? as f64;
        }
        let tape = self.net.forward_tape(x.view())?;
        let (loss, up) = mse_grad(tape.output(), &y);
        let (grads, _) = self.net.backward(&tape, up.view())?;
        self.adam.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_mlp(
            &self.net,
            dir,
            "temporal",
            self.adam.step,
            &[("maxdist", self.maxdist.into())],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (net, step) = load_mlp(dir, "temporal")?;
        let maxdist = Manifest::read(&dir.join("temporal.manifest"))?.get("maxdist")?;
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step = step;
        Ok(Self { net, adam, maxdist })
    }
}

/// Planning cost given by predicted temporal distance.
pub struct TemporalCost<'a>(pub &'a TemporalRegressor);

impl PlanCost for TemporalCost<'_> {
    fn costs(&self, predicted: ArrayView2<f64>, goal: &[f64]) -> Result<Array1<f64>> {
        let goals = Array2::from_shape_fn((predicted.nrows(), goal.len()), |(_, j)| goal[j]);
        self.0.predict_batch(predicted, goals.view())
    }
}

/// Squared Euclidean norm of the observation difference.
pub fn l2_cost(predicted: &[f64], goal: &[f64]) -> Result<f64> {
    if predicted.len() != goal.len() {
        return Err(Error::shape("l2 cost", predicted.len(), goal.len()));
    }
    Ok(predicted
        .iter()
        .zip(goal)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// The best of `n_actions` uniform random actions under the critic's
/// `q_value`; ties go to the earliest sample.
pub fn q_shooting_action(
    critic: &impl GoalCritic,
    obs: &[f64],
    goal: &[f64],
    n_actions: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if n_actions == 0 {
        return Err(Error::Config("n_actions must be at least 1".into()));
    }
    let ad = critic.action_dim();
    let actions = Array2::from_shape_simple_fn((n_actions, ad), || rng.random_range(-1.0..=1.0));
    let o = Array2::from_shape_fn((n_actions, obs.len()), |(_, j)| obs[j]);
    let g = Array2::from_shape_fn((n_actions, goal.len()), |(_, j)| goal[j]);
    let q = critic.q_batch(o.view(), actions.view(), g.view())?;
    let mut best = 0;
    for i in 1..n_actions {
        if q[i] > q[best] {
            best = i;
        }
    }
    Ok(actions.row(best).to_vec())
}

pub struct QShooting<'a, C: GoalCritic> {
    pub critic: &'a C,
    pub n_actions: usize,
}

impl<C: GoalCritic> Controller for QShooting<'_, C> {
    fn act(
        &mut self,
        obs: &[f64],
        goal: &[f64],
        _remaining: usize,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(vec![q_shooting_action(
            self.critic,
            obs,
            goal,
            self.n_actions,
            rng,
        )?])
    }
}

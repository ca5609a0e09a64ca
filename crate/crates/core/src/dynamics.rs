//! Forward models that predict where an action sequence leads.
//!
//! [`ForwardModel`] is a residual network `ŝ′ = ŝ + net(ŝ, a)` trained on
//! multi-step rollouts with backpropagation through the composition.
//! [`ExactModel`] wraps the simulator and serves as an oracle.

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::approx::{load_mlp, save_mlp, Activation, AdamConfig, AdamState, Gradients, Mlp, Tape};
use crate::data::OfflineDataset;
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Batched one-step prediction over normalized observations.
pub trait Dynamics: Sync {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn step_batch(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Predictions after each of `actions.len()` steps from `obs`.
    fn rollout(&self, obs: &[f64], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if obs.len() != self.obs_dim() {
            return Err(Error::shape(
                "rollout observation",
                self.obs_dim(),
                obs.len(),
            ));
        }
        let mut cur = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("one row");
        let mut out = Vec::with_capacity(actions.len());
        for a in actions {
            if a.len() != self.action_dim() {
                return Err(Error::shape("rollout action", self.action_dim(), a.len()));
            }
            let a = ArrayView2::from_shape((1, a.len()), a).expect("one row");
            cur = self.step_batch(cur.view(), a)?;
            out.push(cur.row(0).to_vec());
        }
        Ok(out)
    }

    /// Terminal predictions of many sequences at once. `actions[t]` holds the
    /// step-`t` action of every sequence, one row each.
    fn rollout_terminal(&self, obs: &[f64], actions: &[Array2<f64>]) -> Result<Array2<f64>> {
        let n = actions.first().map_or(0, Array2::nrows);
        let mut cur = Array2::from_shape_fn((n, obs.len()), |(_, j)| obs[j]);
        for a in actions {
            cur = self.step_batch(cur.view(), a.view())?;
        }
        Ok(cur)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub hidden: Vec<usize>,
    pub h_train: usize,
    pub batch_size: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 3],
            h_train: 5,
            batch_size: 64,
            train_steps: 20_000,
            learning_rate: 3e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub net: Mlp,
    pub adam: AdamState,
    pub h_train: usize,
    obs_dim: usize,
    action_dim: usize,
}

/// Multi-step training windows: start observations, per-step actions and
/// per-step true next observations.
#[derive(Clone, Debug)]
pub struct Windows {
    pub start: Array2<f64>,
    pub actions: Vec<Array2<f64>>,
    pub truth: Vec<Array2<f64>>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.start.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Windows at the given `(trajectory, start step)` pairs.
    pub fn gather(dataset: &OfflineDataset, at: &[(usize, usize)], h: usize) -> Self {
        let (od, ad) = (dataset.obs_dim(), dataset.action_dim());
        let b = at.len();
        let mut start = Array2::zeros((b, od));
        let mut actions = vec![Array2::zeros((b, ad)); h];
        let mut truth = vec![Array2::zeros((b, od)); h];
        for (row, &(ti, t)) in at.iter().enumerate() {
            let traj = &dataset.trajectories[ti];
            copy_row(&mut start, row, traj.obs(t));
            for k in 0..h {
                copy_row(&mut actions[k], row, traj.action(t + k));
                copy_row(&mut truth[k], row, traj.obs(t + k + 1));
            }
        }
        Self {
            start,
            actions,
            truth,
        }
    }

    /// `b` windows with trajectories and start steps drawn uniformly.
    pub fn sample(dataset: &OfflineDataset, b: usize, h: usize, rng: &mut Rng) -> Result<Self> {
        let eligible: Vec<usize> = (0..dataset.trajectories.len())
            .filter(|&i| dataset.trajectories[i].len() >= h)
            .collect();
        if eligible.is_empty() {
            return Err(Error::Config(format!(
                "no trajectory is long enough for {h}-step windows"
            )));
        }
        let at: Vec<(usize, usize)> = (0..b)
            .map(|_| {
                let ti = eligible[rng.random_range(0..eligible.len())];
                (ti, rng.random_range(0..=dataset.trajectories[ti].len() - h))
            })
            .collect();
        Ok(Self::gather(dataset, &at, h))
    }

    /// Every window of length `h` in the dataset.
    pub fn all(dataset: &OfflineDataset, h: usize) -> Self {
        let at: Vec<(usize, usize)> = dataset
            .trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..(t.len() + 1).saturating_sub(h)).map(move |s| (i, s)))
            .collect();
        Self::gather(dataset, &at, h)
    }
}

fn copy_row(dst: &mut Array2<f64>, row: usize, src: &[f32]) {
    for (d, &s) in dst.row_mut(row).iter_mut().zip(src) {
        *d = f64::from(s);
    }
}

impl ForwardModel {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        config: &DynamicsConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.h_train == 0 {
            return Err(Error::Config("h_train must be at least 1".into()));
        }
        let mut sizes = vec![obs_dim + action_dim];
        sizes.extend(&config.hidden);
        sizes.push(obs_dim);
        let net = Mlp::new(&sizes, Activation::Identity, rng)?;
        Ok(Self::from_net(net, config.h_train, config.learning_rate)?)
    }

    pub fn from_net(net: Mlp, h_train: usize, learning_rate: f64) -> Result<Self> {
        let obs_dim = net.output_dim();
        let action_dim = net
            .input_dim()
            .checked_sub(obs_dim)
            .filter(|&a| a > 0)
            .ok_or_else(|| Error::Config("network input must exceed its output".into()))?;
        Ok(Self {
            adam: AdamState::new(&net, AdamConfig::with_lr(learning_rate)),
            net,
            h_train,
            obs_dim,
            action_dim,
        })
    }

    /// Mean over windows of `(1/h)·Σ_t ‖ŝ_t − s_t‖²`.
    pub fn window_loss(&self, w: &Windows) -> Result<f64> {
        Ok(multi_step_loss_and_grad(&self.net, w)?.0)
    }

    pub fn train_step(
        &mut self,
        dataset: &OfflineDataset,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        let w = Windows::sample(dataset, batch_size, self.h_train, rng)?;
        let (loss, grads) = multi_step_loss_and_grad(&self.net, &w)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("dynamics loss {loss}")));
        }
        self.adam.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    /// Mean squared prediction error at lookahead `1..=h_eval` over every
    /// window of `dataset`.
    pub fn evaluate(&self, dataset: &OfflineDataset, h_eval: usize) -> Result<Vec<f64>> {
        evaluate(self, dataset, h_eval)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_mlp(
            &self.net,
            dir,
            "dynamics",
            self.adam.step,
            &[("h_train", self.h_train.into())],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (net, step) = load_mlp(dir, "dynamics")?;
        let m = crate::manifest::Manifest::read(&dir.join("dynamics.manifest"))?;
        let mut model =
            Self::from_net(net, m.get("h_train")?, AdamConfig::default().learning_rate)?;
        model.adam.step = step;
        Ok(model)
    }
}

pub fn evaluate(
    model: &impl Dynamics,
    dataset: &OfflineDataset,
    h_eval: usize,
) -> Result<Vec<f64>> {
    let w = Windows::all(dataset, h_eval);
    if w.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cur = w.start.clone();
    let mut out = Vec::with_capacity(h_eval);
    for t in 0..h_eval {
        cur = model.step_batch(cur.view(), w.actions[t].view())?;
        let err = &cur - &w.truth[t];
        out.push(err.mapv(|e| e * e).sum() / w.len() as f64);
    }
    Ok(out)
}

/// Multi-step loss and its gradient through the autoregressive composition.
pub fn multi_step_loss_and_grad(net: &Mlp, w: &Windows) -> Result<(f64, Gradients)> {
    let h = w.actions.len();
    let b = w.len() as f64;
    let od = w.start.ncols();
    let mut tapes: Vec<Tape> = Vec::with_capacity(h);
    let mut preds: Vec<Array2<f64>> = Vec::with_capacity(h);
    let mut cur = w.start.clone();
    for t in 0..h {
        let tape = net.forward_tape(concatenate![Axis(1), cur, w.actions[t]].view())?;
        cur = &cur + tape.output();
        tapes.push(tape);
        preds.push(cur.clone());
    }
    let scale = 1.0 / (h as f64 * b);
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(net);
    let mut carry = Array2::zeros(w.start.raw_dim());
    for t in (0..h).rev() {
        let err = &preds[t] - &w.truth[t];
        loss += err.mapv(|e| e * e).sum() * scale;
        let g = &carry + &(err * (2.0 * scale));
        let (gp, dx) = net.backward(&tapes[t], g.view())?;
        grads.add_assign(&gp);
        carry = g + dx.slice(s![.., ..od]);
    }
    Ok((loss, grads))
}

impl Dynamics for ForwardModel {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn step_batch(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        if obs.ncols() != self.obs_dim {
            return Err(Error::shape("model observation", self.obs_dim, obs.ncols()));
        }
        if actions.ncols() != self.action_dim {
            return Err(Error::shape(
                "model action",
                self.action_dim,
                actions.ncols(),
            ));
        }
        let delta = self
            .net
            .forward_batch(concatenate![Axis(1), obs, actions].view())?;
        Ok(&obs + &delta)
    }
}

/// Trains a forward model with seeds derived from `seed`.
pub fn train_dynamics(
    dataset: &OfflineDataset,
    config: &DynamicsConfig,
    seed: u64,
    mut on_loss: impl FnMut(usize, f64),
) -> Result<ForwardModel> {
    let mut model = ForwardModel::new(
        dataset.obs_dim(),
        dataset.action_dim(),
        config,
        &mut rng::derived(seed, 10),
    )?;
    let mut rng = rng::derived(seed, 11);
    for step in 0..config.train_steps {
        let loss = model.train_step(dataset, config.batch_size, &mut rng)?;
        on_loss(step, loss);
    }
    Ok(model)
}

/// The simulator as a model over normalized observations.
#[derive(Clone, Debug)]
pub struct ExactModel {
    pub env: Env,
}

impl ExactModel {
    pub fn new(config: EnvConfig) -> Result<Self> {
        Ok(Self {
            env: Env::new(config)?,
        })
    }
}

impl Dynamics for ExactModel {
    fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn step_batch(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let od = self.env.obs_dim();
        if obs.ncols() != od {
            return Err(Error::shape("model observation", od, obs.ncols()));
        }
        let mut out = Array2::zeros((obs.nrows(), od));
        for (i, (o, a)) in obs.rows().into_iter().zip(actions.rows()).enumerate() {
            let state = self.env.denormalize(&o.to_vec());
            let next = self.env.transition(&state, &a.to_vec())?;
            out.row_mut(i)
                .assign(&ndarray::ArrayView1::from(&self.env.observe(&next).0));
        }
        Ok(out)
    }
}

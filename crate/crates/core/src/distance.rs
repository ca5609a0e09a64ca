//! Dynamical distances from offline goal-conditioned Q-learning.
//!
//! Rewards are `r_step` per step and `r_goal` on reaching the goal, after
//! which the episode terminates. The optimal Q-value after `d` further steps is
//!
//! ```text
//! Q_d = r_step·(1 − γ^d)/(1 − γ) + r_goal·γ^d
//! ```
//!
//! which [`DistanceScale::distance_of_q`] inverts. Two critics with target
//! copies, a deterministic actor with target-policy smoothing and a Lagrangian
//! conservative penalty make up the learner.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::approx::{load_mlp, save_mlp, Activation, AdamConfig, AdamState, Gradients, Mlp};
use crate::data::{make_batch, BatchSpec, KnnIndex, OfflineDataset, RelabeledBatch};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub gamma: f64,
    pub r_step: f64,
    pub r_goal: f64,
    pub polyak: f64,
    pub actor_noise_sigma: f64,
    pub actor_noise_clip: f64,
    /// Weight of `mean(z²)` over the actor's pre-tanh outputs.
    pub actor_preact_penalty: f64,
    /// Conservative penalty on; `false` removes the term and freezes alpha.
    pub cql: bool,
    pub cql_tau: f64,
    pub cql_n_actions: usize,
    pub cql_alpha_lr: f64,
    pub cql_alpha_init: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub p_geom: f64,
    pub mix: f64,
    pub knn_k: usize,
    pub knn_max_points: usize,
    pub learning_rate: f64,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            r_step: 1.0,
            r_goal: 10.0,
            polyak: 0.995,
            actor_noise_sigma: 0.1,
            actor_noise_clip: 0.2,
            actor_preact_penalty: 1e-2,
            cql: true,
            cql_tau: 3.0,
            cql_n_actions: 10,
            cql_alpha_lr: 1e-3,
            cql_alpha_init: 1.0,
            batch_size: 64,
            train_steps: 20_000,
            p_geom: 0.3,
            mix: 0.5,
            knn_k: 16,
            knn_max_points: 200_000,
            learning_rate: 3e-4,
            critic_hidden: vec![128; 4],
            actor_hidden: vec![128; 4],
        }
    }
}

impl DistanceConfig {
    pub fn scale(&self) -> DistanceScale {
        DistanceScale {
            gamma: self.gamma,
            r_step: self.r_step,
            r_goal: self.r_goal,
        }
    }

    pub fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            batch_size: self.batch_size,
            p: self.p_geom,
            mix: self.mix,
            r_step: self.r_step,
            r_goal: self.r_goal,
            knn_k: self.knn_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if self.r_goal <= self.r_step / (1.0 - self.gamma) {
            return bad(format!(
                "r_goal {} must exceed r_step/(1 - gamma) = {} for Q to decrease with distance",
                self.r_goal,
                self.r_step / (1.0 - self.gamma)
            ));
        }
        if self.actor_noise_sigma < 0.0 || self.actor_noise_clip < 0.0 {
            return bad("actor noise sigma and clip must be nonnegative".into());
        }
        if !(self.actor_preact_penalty >= 0.0) {
            return bad("actor_preact_penalty must be nonnegative".into());
        }
        if self.cql && self.cql_n_actions == 0 {
            return bad("cql_n_actions must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad(format!("polyak {} outside [0, 1]", self.polyak));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// Reward shaping constants that tie Q-values to step counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceScale {
    pub gamma: f64,
    pub r_step: f64,
    pub r_goal: f64,
}

/// A step count recovered from a Q-value. `clamped` marks inputs outside
/// `(q_inf, r_goal]`, which map to 0 (above) or infinity (at or below).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceEstimate {
    pub steps: f64,
    pub clamped: bool,
}

impl DistanceScale {
    /// Value of never reaching the goal, `r_step / (1 − γ)`.
    pub fn q_inf(&self) -> f64 {
        self.r_step / (1.0 - self.gamma)
    }

    pub fn q_of_distance(&self, d: f64) -> f64 {
        let g = self.gamma.powf(d);
        self.r_step * (1.0 - g) / (1.0 - self.gamma) + self.r_goal * g
    }

    pub fn distance_of_q(&self, q: f64) -> DistanceEstimate {
        let q_inf = self.q_inf();
        if q > self.r_goal {
            return DistanceEstimate {
                steps: 0.0,
                clamped: true,
            };
        }
        if q <= q_inf || q.is_nan() {
            return DistanceEstimate {
                steps: f64::INFINITY,
                clamped: true,
            };
        }
        let ratio = (q - q_inf) / (self.r_goal - q_inf);
        DistanceEstimate {
            steps: (ratio.ln() / self.gamma.ln()).max(0.0),
            clamped: false,
        }
    }
}

pub fn distance_from_q(q: f64, cfg: &DistanceConfig) -> DistanceEstimate {
    cfg.scale().distance_of_q(q)
}

/// Anything that scores `(observation, action, goal)` rows and proposes a
/// maximizing action: the learned ensemble or an exact table.
pub trait GoalCritic: Sync {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn scale(&self) -> DistanceScale;
    fn q_batch(
        &self,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        goals: ArrayView2<f64>,
    ) -> Result<Array1<f64>>;
    fn greedy_batch(&self, obs: ArrayView2<f64>, goals: ArrayView2<f64>) -> Result<Array2<f64>>;

    fn q_value(&self, obs: &[f64], action: &[f64], goal: &[f64]) -> Result<f64> {
        Ok(self.q_batch(row(obs), row(action), row(goal))?[0])
    }

    fn greedy_action(&self, obs: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .greedy_batch(row(obs), row(goal))?
            .into_raw_vec_and_offset()
            .0)
    }

    /// `max_α Q(obs, α, goal)` with `α` from [`GoalCritic::greedy_batch`].
    fn value_batch(&self, obs: ArrayView2<f64>, goals: ArrayView2<f64>) -> Result<Array1<f64>> {
        let a = self.greedy_batch(obs, goals)?;
        self.q_batch(obs, a.view(), goals)
    }

    /// `Q(obs, 0, goal)`. The zero action leaves every environment where it
    /// is, so this scores the observation itself rather than its best
    /// successor; the goal is then the unique maximizer.
    fn hold_value_batch(
        &self,
        obs: ArrayView2<f64>,
        goals: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let zeros = Array2::zeros((obs.nrows(), self.action_dim()));
        self.q_batch(obs, zeros.view(), goals)
    }

    /// Step counts recovered from [`GoalCritic::hold_value_batch`].
    fn state_distance_batch(
        &self,
        obs: ArrayView2<f64>,
        goals: ArrayView2<f64>,
    ) -> Result<Vec<DistanceEstimate>> {
        let scale = self.scale();
        Ok(self
            .hold_value_batch(obs, goals)?
            .iter()
            .map(|&q| scale.distance_of_q(q))
            .collect())
    }
}

pub(crate) fn row(v: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, v.len()), v).expect("contiguous slice")
}

#[derive(Clone, Debug)]
pub struct QEnsemble {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub actor: Mlp,
    pub adam_q1: AdamState,
    pub adam_q2: AdamState,
    pub adam_actor: AdamState,
    pub cql_alpha: f64,
    pub config: DistanceConfig,
    obs_dim: usize,
    action_dim: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub q1_bellman: f64,
    pub q2_bellman: f64,
    pub cql_r1: f64,
    pub cql_r2: f64,
    pub actor_loss: f64,
    pub cql_alpha: f64,
}

/// Loss pieces of one critic update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLoss {
    pub bellman: f64,
    /// Mean `logsumexp_j Q(s, a_j, g) − Q(s, a, g)`; 0 without the penalty.
    pub cql_gap: f64,
    pub total: f64,
}

/// Conservative-penalty inputs: `random_actions` holds `n` rows per batch row,
/// grouped by batch row.
pub struct CqlInput<'a> {
    pub random_actions: ArrayView2<'a, f64>,
    pub n: usize,
    pub alpha: f64,
    pub tau: f64,
}

impl QEnsemble {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        config: DistanceConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut critic_sizes = vec![2 * obs_dim + action_dim];
        critic_sizes.extend(&config.critic_hidden);
        critic_sizes.push(1);
        let mut actor_sizes = vec![2 * obs_dim];
        actor_sizes.extend(&config.actor_hidden);
        actor_sizes.push(action_dim);
        let q1 = Mlp::new(&critic_sizes, Activation::Identity, rng)?;
        let q2 = Mlp::new(&critic_sizes, Activation::Identity, rng)?;
        let actor = Mlp::new(&actor_sizes, Activation::Tanh, rng)?;
        let adam = AdamConfig::with_lr(config.learning_rate);
        Ok(Self {
            adam_q1: AdamState::new(&q1, adam),
            adam_q2: AdamState::new(&q2, adam),
            adam_actor: AdamState::new(&actor, adam),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            actor,
            cql_alpha: config.cql_alpha_init.max(0.0),
            config,
            obs_dim,
            action_dim,
        })
    }

    fn check_batch(&self, batch: &RelabeledBatch) -> Result<()> {
        if batch.obs.ncols() != self.obs_dim || batch.goals.ncols() != self.obs_dim {
            return Err(Error::shape(
                "batch observations",
                self.obs_dim,
                batch.obs.ncols(),
            ));
        }
        if batch.actions.ncols() != self.action_dim {
            return Err(Error::shape(
                "batch actions",
                self.action_dim,
                batch.actions.ncols(),
            ));
        }
        Ok(())
    }

    /// Smoothed next actions `clip(actor(s′, g) + clip(ε, ±c), ±1)`.
    pub fn smoothed_next_actions(
        &self,
        next_obs: ArrayView2<f64>,
        goals: ArrayView2<f64>,
        rng: &mut Rng,
    ) -> Result<Array2<f64>> {
        let mut a = self
            .actor
            .forward_batch(concatenate![Axis(1), next_obs, goals].view())?;
        let (sigma, clip) = (self.config.actor_noise_sigma, self.config.actor_noise_clip);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            a.mapv_inplace(|v| (v + normal.sample(rng).clamp(-clip, clip)).clamp(-1.0, 1.0));
        }
        Ok(a)
    }

    /// Bellman targets for `batch`: `r_goal` on terminal rows, otherwise
    /// `r_step + γ·min(Q1′, Q2′)(s′, a′, g)`.
    pub fn td_target(&self, batch: &RelabeledBatch, rng: &mut Rng) -> Result<Array1<f64>> {
        self.check_batch(batch)?;
        let next_a = self.smoothed_next_actions(batch.next_obs.view(), batch.goals.view(), rng)?;
        let x = concatenate![Axis(1), batch.next_obs, next_a, batch.goals];
        let t1 = self.q1_target.forward_batch(x.view())?;
        let t2 = self.q2_target.forward_batch(x.view())?;
        let next_q: Array1<f64> = t1
            .column(0)
            .iter()
            .zip(t2.column(0))
            .map(|(a, b)| a.min(*b))
            .collect();
        Ok(bellman_targets(
            &batch.reward,
            &batch.terminal,
            next_q.view(),
            &self.config,
        ))
    }

    /// One optimization step on `batch`: both critics (Bellman error plus the
    /// conservative term), the dual variable, the actor, then both targets.
    pub fn train_step(&mut self, batch: &RelabeledBatch, rng: &mut Rng) -> Result<LossReport> {
        let targets = self.td_target(batch, rng)?;
        let n = self.config.cql_n_actions;
        let random_actions = if self.config.cql {
            Some(Array2::from_shape_simple_fn(
                (batch.len() * n, self.action_dim),
                || rng.random_range(-1.0..=1.0),
            ))
        } else {
            None
        };
        let cql = |alpha| {
            random_actions.as_ref().map(|ra| CqlInput {
                random_actions: ra.view(),
                n,
                alpha,
                tau: self.config.cql_tau,
            })
        };
        let alpha = self.cql_alpha;
        let (l1, g1) = critic_loss_and_grad(&self.q1, batch, targets.view(), cql(alpha).as_ref())?;
        let (l2, g2) = critic_loss_and_grad(&self.q2, batch, targets.view(), cql(alpha).as_ref())?;
        if !l1.total.is_finite() || !l2.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss (q1 {:?}, q2 {:?}, alpha {alpha})",
                l1, l2
            )));
        }
        self.adam_q1.step(&mut self.q1, &g1)?;
        self.adam_q2.step(&mut self.q2, &g2)?;
        if self.config.cql {
            let gap = 0.5 * (l1.cql_gap + l2.cql_gap);
            self.cql_alpha =
                (self.cql_alpha + self.config.cql_alpha_lr * (gap - self.config.cql_tau)).max(0.0);
        }
        let (actor_loss, ga) = actor_loss_and_grad(
            &self.actor,
            &self.q1,
            batch.obs.view(),
            batch.goals.view(),
            self.config.actor_preact_penalty,
        )?;
        if !actor_loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss {actor_loss}")));
        }
        self.adam_actor.step(&mut self.actor, &ga)?;
        self.q1_target.polyak_update(&self.q1, self.config.polyak)?;
        self.q2_target.polyak_update(&self.q2, self.config.polyak)?;
        Ok(LossReport {
            step: self.adam_q1.step as usize,
            q1_bellman: l1.bellman,
            q2_bellman: l2.bellman,
            cql_r1: l1.cql_gap,
            cql_r2: l2.cql_gap,
            actor_loss,
            cql_alpha: self.cql_alpha,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let step = self.adam_q1.step;
        for (name, net) in [
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
            ("actor", &self.actor),
        ] {
            save_mlp(net, dir, name, step, &[])?;
        }
        let mut m = Manifest::new();
        m.set("version", &crate::approx::CHECKPOINT_VERSION);
        m.set("kind", &"distance");
        m.set("obs_dim", &self.obs_dim);
        m.set("action_dim", &self.action_dim);
        m.set("cql_alpha", &self.cql_alpha);
        m.set("config", &self.config);
        m.write(&dir.join("ensemble.manifest"))
    }

    /// Restores a trained ensemble. Optimizer moments are not stored and start
    /// from zero.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("ensemble.manifest");
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path));
        }
        let m = Manifest::read(&path)?;
        m.check_version(crate::approx::CHECKPOINT_VERSION)?;
        let config: DistanceConfig = m.get("config")?;
        let adam = AdamConfig::with_lr(config.learning_rate);
        let (q1, step) = load_mlp(dir, "q1")?;
        let (q2, _) = load_mlp(dir, "q2")?;
        let (actor, _) = load_mlp(dir, "actor")?;
        let mut adam_q1 = AdamState::new(&q1, adam);
        adam_q1.step = step;
        Ok(Self {
            adam_q2: AdamState::new(&q2, adam),
            adam_actor: AdamState::new(&actor, adam),
            adam_q1,
            q1_target: load_mlp(dir, "q1_target")?.0,
            q2_target: load_mlp(dir, "q2_target")?.0,
            q1,
            q2,
            actor,
            cql_alpha: m.get("cql_alpha")?,
            config,
            obs_dim: m.get("obs_dim")?,
            action_dim: m.get("action_dim")?,
        })
    }
}

impl GoalCritic for QEnsemble {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn scale(&self) -> DistanceScale {
        self.config.scale()
    }

    /// `min(Q1, Q2)`.
    fn q_batch(
        &self,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        goals: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        if obs.ncols() != self.obs_dim || goals.ncols() != self.obs_dim {
            return Err(Error::shape(
                "critic observation",
                self.obs_dim,
                obs.ncols(),
            ));
        }
        if actions.ncols() != self.action_dim {
            return Err(Error::shape(
                "critic action",
                self.action_dim,
                actions.ncols(),
            ));
        }
        let x = concatenate![Axis(1), obs, actions, goals];
        let a = self.q1.forward_batch(x.view())?;
        let b = self.q2.forward_batch(x.view())?;
        Ok(a.column(0)
            .iter()
            .zip(b.column(0))
            .map(|(x, y)| x.min(*y))
            .collect())
    }

    fn greedy_batch(&self, obs: ArrayView2<f64>, goals: ArrayView2<f64>) -> Result<Array2<f64>> {
        if obs.ncols() != self.obs_dim || goals.ncols() != self.obs_dim {
            return Err(Error::shape("actor observation", self.obs_dim, obs.ncols()));
        }
        self.actor
            .forward_batch(concatenate![Axis(1), obs, goals].view())
    }
}

pub fn bellman_targets(
    reward: &[f64],
    terminal: &[bool],
    next_q: ndarray::ArrayView1<f64>,
    cfg: &DistanceConfig,
) -> Array1<f64> {
    reward
        .iter()
        .zip(terminal)
        .zip(next_q)
        .map(|((&r, &done), &q)| if done { cfg.r_goal } else { r + cfg.gamma * q })
        .collect()
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Critic loss `mean (Q − y)² + α·(R − τ)` and its parameter gradient, where
/// `R = mean_b [logsumexp_j Q(s_b, a_bj, g_b) − Q(s_b, a_b, g_b)]` over the
/// sampled actions of `cql`.
pub fn critic_loss_and_grad(
    net: &Mlp,
    batch: &RelabeledBatch,
    targets: ndarray::ArrayView1<f64>,
    cql: Option<&CqlInput>,
) -> Result<(CriticLoss, Gradients)> {
    let b = batch.len();
    let data_x = concatenate![Axis(1), batch.obs, batch.actions, batch.goals];
    let x = match cql {
        Some(c) => {
            let rep = |m: &Array2<f64>| {
                let mut out = Array2::zeros((b * c.n, m.ncols()));
                for (i, r) in m.rows().into_iter().enumerate() {
                    for j in 0..c.n {
                        out.row_mut(i * c.n + j).assign(&r);
                    }
                }
                out
            };
            let rand_x = concatenate![
                Axis(1),
                rep(&batch.obs),
                c.random_actions,
                rep(&batch.goals)
            ];
            concatenate![Axis(0), data_x, rand_x]
        }
        None => data_x,
    };
    let tape = net.forward_tape(x.view())?;
    let q = tape.output().column(0);
    let mut upstream = Array2::zeros((x.nrows(), 1));
    let mut bellman = 0.0;
    for i in 0..b {
        let err = q[i] - targets[i];
        bellman += err * err;
        upstream[[i, 0]] = 2.0 * err / b as f64;
    }
    bellman /= b as f64;
    let mut gap = 0.0;
    let mut total = bellman;
    if let Some(c) = cql {
        let qr = q.slice(s![b..]);
        for i in 0..b {
            let group = qr.slice(s![i * c.n..(i + 1) * c.n]);
            let lse = logsumexp(group.iter().copied());
            gap += lse - q[i];
            upstream[[i, 0]] -= c.alpha / b as f64;
            for j in 0..c.n {
                upstream[[b + i * c.n + j, 0]] = c.alpha * (group[j] - lse).exp() / b as f64;
            }
        }
        gap /= b as f64;
        total += c.alpha * (gap - c.tau);
    }
    let (grads, _) = net.backward(&tape, upstream.view())?;
    Ok((
        CriticLoss {
            bellman,
            cql_gap: gap,
            total,
        },
        grads,
    ))
}

/// Actor loss `−mean_b Q1(s_b, actor(s_b, g_b), g_b) + λ·mean(z²)`, where `z`
/// is the actor output before tanh, and its gradient with respect to the actor
/// parameters.
pub fn actor_loss_and_grad(
    actor: &Mlp,
    critic: &Mlp,
    obs: ArrayView2<f64>,
    goals: ArrayView2<f64>,
    preact_penalty: f64,
) -> Result<(f64, Gradients)> {
    let b = obs.nrows();
    let od = obs.ncols();
    let actor_tape = actor.forward_tape(concatenate![Axis(1), obs, goals].view())?;
    let actions = actor_tape.output();
    let ad = actions.ncols();
    let x = concatenate![Axis(1), obs, actions.view(), goals];
    let critic_tape = critic.forward_tape(x.view())?;
    let z = actor_tape.output_pre();
    let n = z.len() as f64;
    let loss = -critic_tape.output().column(0).mean().unwrap_or(0.0)
        + preact_penalty * z.mapv(|v| v * v).sum() / n;
    let upstream = Array2::from_elem((b, 1), -1.0 / b as f64);
    let (_, dx) = critic.backward(&critic_tape, upstream.view())?;
    let da = dx.slice(s![.., od..od + ad]);
    let dz = &da * &actions.mapv(|y| 1.0 - y * y) + &(z * (2.0 * preact_penalty / n));
    let (grads, _) = actor.backward_from_pre(&actor_tape, dz)?;
    Ok((loss, grads))
}

/// Trains an ensemble on `dataset`. Negative mining is used when
/// `config.mix < 1`.
pub fn train_distance(
    dataset: &OfflineDataset,
    config: &DistanceConfig,
    seed: u64,
    mut on_report: impl FnMut(&LossReport),
) -> Result<QEnsemble> {
    let mut init_rng = rng::derived(seed, 0);
    let mut ens = QEnsemble::new(
        dataset.obs_dim(),
        dataset.action_dim(),
        config.clone(),
        &mut init_rng,
    )?;
    let index = if config.mix < 1.0 {
        Some(KnnIndex::build(
            dataset,
            config.knn_max_points,
            rng::derive_seed(seed, 1),
        )?)
    } else {
        None
    };
    let spec = config.batch_spec();
    let mut rng = rng::derived(seed, 2);
    for _ in 0..config.train_steps {
        let batch = make_batch(dataset, index.as_ref(), &spec, &mut rng)?;
        let report = ens.train_step(&batch, &mut rng)?;
        on_report(&report);
    }
    Ok(ens)
}

//! Benchmark harness: task sets, multi-seed success rates, heatmaps and
//! ablation drivers.

mod checks;
mod heatmap;
mod pipeline;

pub use checks::{
    chain, chain_identity, grid_pair_tasks, identity_sweep, inversion_error, oracle_planner,
    random_gridworld,
};

pub use heatmap::{
    critic_distance, heatmap, heatmap_argmin, oracle_distance, sweep_axis, write_csv,
};
pub use pipeline::{
    ablate_horizon, ablate_mining, ablate_reset, collect, mining_off, model_seed, run_benchmark,
    train_component, train_models, training_split, AblationReport, Component,
};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{GcbcController, GcbcPolicy, QShooting, TemporalCost, TemporalRegressor};
use crate::config::{Config, Difficulty};
use crate::data::FilteredNoise;
use crate::distance::QEnsemble;
use crate::dynamics::ForwardModel;
use crate::env::{dist, Env, EnvConfig, EnvKind, EnvState, Observation};
use crate::error::{Error, Result};
use crate::planner::{run_episode, Controller, L2Cost, Mpc, QCost};
use crate::rng;

/// Exploration noise used when rolling out candidate tasks.
const TASK_ROLLOUT_STDEV: f64 = 0.6;
const TASK_ROLLOUT_BETA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub start: EnvState,
    pub goal: EnvState,
    pub goal_obs: Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
    pub difficulty: Difficulty,
    pub seed: u64,
    pub min_object_move: f64,
    pub min_arm_object_gap: f64,
    /// Rollouts drawn to fill the set.
    pub attempts: usize,
}

impl TaskSet {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// A hand-built set, e.g. every start/goal pair of a small grid.
    pub fn from_pairs(env: &Env, pairs: Vec<(EnvState, EnvState)>) -> Self {
        let tasks = pairs
            .into_iter()
            .map(|(start, goal)| Task {
                goal_obs: env.observe(&goal),
                start,
                goal,
            })
            .collect::<Vec<_>>();
        Self {
            attempts: tasks.len(),
            tasks,
            difficulty: Difficulty::Regular,
            seed: 0,
            min_object_move: 0.0,
            min_arm_object_gap: 0.0,
        }
    }
}

/// Rolls random episodes and keeps `(start, final state)` pairs whose task
/// component moved at least `min_object_move`. Hard sets also need the arm at
/// least `min_arm_object_gap` from the object in the goal state.
pub fn gen_tasks(
    env_config: &EnvConfig,
    n: usize,
    difficulty: Difficulty,
    min_object_move: f64,
    min_arm_object_gap: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<TaskSet> {
    if n == 0 {
        return Err(Error::Config("a task set needs at least one task".into()));
    }
    if difficulty == Difficulty::Hard && env_config.kind != EnvKind::Planarpush {
        return Err(Error::Config(format!(
            "hard tasks need an object; {} has none",
            env_config.kind
        )));
    }
    let env = Env::new(env_config.clone())?;
    let mut tasks = Vec::with_capacity(n);
    let mut attempts = 0;
    while tasks.len() < n {
        if attempts >= max_attempts {
            return Err(Error::TaskStarvation {
                attempts,
                accepted: tasks.len(),
                wanted: n,
            });
        }
        let i = attempts as u64;
        attempts += 1;
        let start = env.reset(rng::derive_seed(seed, 2 * i));
        let mut r = rng::derived(seed, 2 * i + 1);
        let mut noise = FilteredNoise::new(
            vec![TASK_ROLLOUT_STDEV; env.action_dim()],
            TASK_ROLLOUT_BETA,
        )?;
        let mut goal = start.clone();
        while goal.time < env.config().max_episode_len {
            let a: Vec<f64> = noise
                .sample(&mut r)
                .into_iter()
                .map(|x| x.clamp(-1.0, 1.0))
                .collect();
            goal = env.step(&goal, &a)?;
        }
        let moved = dist(env.task_component(&start), env.task_component(&goal));
        if moved < min_object_move {
            continue;
        }
        if difficulty == Difficulty::Hard
            && dist(&goal.actuated, &goal.underactuated) < min_arm_object_gap
        {
            continue;
        }
        let goal = EnvState { time: 0, ..goal };
        tasks.push(Task {
            goal_obs: env.observe(&goal),
            start,
            goal,
        });
    }
    Ok(TaskSet {
        tasks,
        difficulty,
        seed,
        min_object_move,
        min_arm_object_gap,
        attempts,
    })
}

/// Task generation with the settings recorded in `cfg.eval`.
pub fn gen_tasks_from(cfg: &Config, difficulty: Difficulty) -> Result<TaskSet> {
    let e = &cfg.eval;
    gen_tasks(
        &cfg.env,
        e.n_tasks,
        difficulty,
        e.min_object_move,
        e.min_arm_object_gap,
        e.task_seed,
        e.n_tasks * e.task_attempts_per_task,
    )
}

/// Outcomes of one evaluation seed, in task order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub success: Vec<bool>,
    pub first_success: Vec<Option<usize>>,
}

impl SeedOutcome {
    pub fn rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

/// Runs one episode per task. Episode `i` draws from a stream derived from
/// `(seed, i)`, so outcomes do not depend on evaluation order.
pub fn evaluate_tasks<C: Controller>(
    env: &Env,
    tasks: &TaskSet,
    threshold: f64,
    seed: u64,
    mut controller: impl FnMut() -> C,
) -> Result<SeedOutcome> {
    let mut success = Vec::with_capacity(tasks.len());
    let mut first_success = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.tasks.iter().enumerate() {
        let mut r = rng::derived(seed, i as u64);
        let mut c = controller();
        let ep = run_episode(env, &mut c, &task.start, &task.goal, threshold, &mut r)?;
        success.push(ep.success);
        first_success.push(ep.first_success);
    }
    Ok(SeedOutcome {
        seed,
        success,
        first_success,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Learned distance as the planning cost over a learned model.
    Mbold,
    /// Euclidean observation distance over a learned model.
    L2,
    /// Regressed temporal distance over a learned model.
    Temporal,
    Gcbc,
    /// Best of random actions under the learned Q-function, no model.
    Qshooting,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mbold,
        Method::L2,
        Method::Temporal,
        Method::Gcbc,
        Method::Qshooting,
    ];

    pub fn needs_distance(self) -> bool {
        matches!(self, Method::Mbold | Method::Qshooting)
    }

    pub fn needs_dynamics(self) -> bool {
        matches!(self, Method::Mbold | Method::L2 | Method::Temporal)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mbold => "mbold",
            Method::L2 => "l2",
            Method::Temporal => "temporal",
            Method::Gcbc => "gcbc",
            Method::Qshooting => "qshooting",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Trained artifacts of one seed. Only the parts a method needs are set.
#[derive(Clone, Debug, Default)]
pub struct SeedModels {
    pub distance: Option<QEnsemble>,
    pub dynamics: Option<ForwardModel>,
    pub gcbc: Option<GcbcPolicy>,
    pub temporal: Option<TemporalRegressor>,
}

fn need<'a, T>(part: &'a Option<T>, what: &str, method: Method) -> Result<&'a T> {
    part.as_ref()
        .ok_or_else(|| Error::MissingCheckpoint(format!("{what} model for method {method}").into()))
}

impl SeedModels {
    /// Loads what `method` needs from `dir`.
    pub fn load(dir: &Path, method: Method) -> Result<Self> {
        let mut m = SeedModels::default();
        if method.needs_distance() {
            m.distance = Some(QEnsemble::load(dir)?);
        }
        if method.needs_dynamics() {
            m.dynamics = Some(ForwardModel::load(dir)?);
        }
        match method {
            Method::Gcbc => m.gcbc = Some(GcbcPolicy::load(dir)?),
            Method::Temporal => m.temporal = Some(TemporalRegressor::load(dir)?),
            _ => {}
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        if let Some(d) = &self.distance {
            d.save(dir)?;
        }
        if let Some(d) = &self.dynamics {
            d.save(dir)?;
        }
        if let Some(p) = &self.gcbc {
            p.save(dir)?;
        }
        if let Some(t) = &self.temporal {
            t.save(dir)?;
        }
        Ok(())
    }

    /// One seed of `method` on `tasks` with the planner and evaluation
    /// settings of `cfg`.
    pub fn evaluate(
        &self,
        method: Method,
        tasks: &TaskSet,
        cfg: &Config,
        seed: u64,
    ) -> Result<SeedOutcome> {
        let env = Env::new(cfg.env.clone())?;
        let threshold = cfg.success_threshold();
        match method {
            Method::Mbold => {
                let model = need(&self.dynamics, "dynamics", method)?;
                let cost = QCost {
                    critic: need(&self.distance, "distance", method)?,
                };
                evaluate_tasks(&env, tasks, threshold, seed, || {
                    Mpc::new(model, &cost, cfg.cem.clone())
                })
            }
            Method::L2 => {
                let model = need(&self.dynamics, "dynamics", method)?;
                evaluate_tasks(&env, tasks, threshold, seed, || {
                    Mpc::new(model, &L2Cost, cfg.cem.clone())
                })
            }
            Method::Temporal => {
                let model = need(&self.dynamics, "dynamics", method)?;
                let cost = TemporalCost(need(&self.temporal, "temporal", method)?);
                evaluate_tasks(&env, tasks, threshold, seed, || {
                    Mpc::new(model, &cost, cfg.cem.clone())
                })
            }
            Method::Gcbc => {
                let policy = need(&self.gcbc, "gcbc", method)?;
                evaluate_tasks(&env, tasks, threshold, seed, || GcbcController(policy))
            }
            Method::Qshooting => {
                let critic = need(&self.distance, "distance", method)?;
                evaluate_tasks(&env, tasks, threshold, seed, || QShooting {
                    critic,
                    n_actions: cfg.eval.q_shooting_actions,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub env: EnvKind,
    pub difficulty: Difficulty,
    pub n_tasks: usize,
    pub task_seed: u64,
    pub min_object_move: f64,
    pub min_arm_object_gap: f64,
    pub success_threshold: f64,
    pub seeds: Vec<SeedOutcome>,
    pub mean: f64,
    /// Population standard deviation of the per-seed rates.
    pub std: f64,
    pub runtime_secs: f64,
}

impl BenchReport {
    pub fn new(
        method: impl Into<String>,
        env: EnvKind,
        tasks: &TaskSet,
        threshold: f64,
        seeds: Vec<SeedOutcome>,
        runtime_secs: f64,
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Config("a report needs at least one seed".into()));
        }
        if let Some(s) = seeds.iter().find(|s| s.success.len() != tasks.len()) {
            return Err(Error::shape("seed outcomes", tasks.len(), s.success.len()));
        }
        let rates: Vec<f64> = seeds.iter().map(SeedOutcome::rate).collect();
        let (mean, std) = mean_std(&rates);
        Ok(Self {
            method: method.into(),
            env,
            difficulty: tasks.difficulty,
            n_tasks: tasks.len(),
            task_seed: tasks.seed,
            min_object_move: tasks.min_object_move,
            min_arm_object_gap: tasks.min_arm_object_gap,
            success_threshold: threshold,
            seeds,
            mean,
            std,
            runtime_secs,
        })
    }

    pub fn rates(&self) -> Vec<f64> {
        self.seeds.iter().map(SeedOutcome::rate).collect()
    }

    /// Aligned text table, one row per seed plus the aggregate.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "method {}  env {}  difficulty {}  tasks {}  task_seed {}  min_object_move {}  min_arm_object_gap {}  threshold {}",
            self.method,
            self.env,
            self.difficulty,
            self.n_tasks,
            self.task_seed,
            self.min_object_move,
            self.min_arm_object_gap,
            self.success_threshold
        );
        let _ = writeln!(out, "{:>20}  {:>9}  {:>7}", "seed", "successes", "rate");
        for s in &self.seeds {
            let wins = s.success.iter().filter(|&&x| x).count();
            let _ = writeln!(out, "{:>20}  {:>9}  {:>7.3}", s.seed, wins, s.rate());
        }
        let _ = writeln!(
            out,
            "{:>20}  {:>9}  {:>7.3} ± {:.3}  ({:.1} s)",
            "mean", "", self.mean, self.std, self.runtime_secs
        );
        out
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluates `method` on every seed with already trained models.
pub fn bench_models(
    method: Method,
    models: &[(u64, &SeedModels)],
    tasks: &TaskSet,
    cfg: &Config,
) -> Result<BenchReport> {
    let t0 = Instant::now();
    let seeds = models
        .iter()
        .map(|(seed, m)| m.evaluate(method, tasks, cfg, *seed))
        .collect::<Result<Vec<_>>>()?;
    BenchReport::new(
        method.to_string(),
        cfg.env.kind,
        tasks,
        cfg.success_threshold(),
        seeds,
        t0.elapsed().as_secs_f64(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ExactModel;
    use crate::oracle::{bfs_distance, value_iteration};
    use crate::planner::CemConfig;

    #[test]
    fn task_sets_are_deterministic_and_replayable() {
        let cfg = EnvConfig::pointmass2d();
        let a = gen_tasks(&cfg, 10, Difficulty::Regular, 0.1, 0.15, 3, 10_000).unwrap();
        let b = gen_tasks(&cfg, 10, Difficulty::Regular, 0.1, 0.15, 3, 10_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let env = Env::new(cfg).unwrap();
        for t in &a.tasks {
            assert!(dist(&t.start.actuated, &t.goal.actuated) >= 0.1);
            assert_eq!(t.goal_obs, env.observe(&t.goal));
            assert_eq!(t.start.time, 0);
        }
    }

    #[test]
    fn zero_move_threshold_accepts_every_rollout() {
        let t = gen_tasks(
            &EnvConfig::planarpush(),
            20,
            Difficulty::Regular,
            0.0,
            0.15,
            1,
            20,
        )
        .unwrap();
        assert_eq!(t.attempts, 20);
    }

    #[test]
    fn hard_goals_respect_the_gap() {
        let t = gen_tasks(
            &EnvConfig::planarpush(),
            5,
            Difficulty::Hard,
            0.1,
            0.15,
            2,
            1_000_000,
        )
        .unwrap();
        for task in &t.tasks {
            assert!(dist(&task.goal.actuated, &task.goal.underactuated) >= 0.15);
            assert!(dist(&task.start.underactuated, &task.goal.underactuated) >= 0.1);
        }
        assert!(gen_tasks(
            &EnvConfig::pointmass2d(),
            5,
            Difficulty::Hard,
            0.1,
            0.15,
            2,
            100
        )
        .is_err());
    }

    #[test]
    fn starvation_is_an_error() {
        let err = gen_tasks(
            &EnvConfig::pointmass2d(),
            3,
            Difficulty::Regular,
            10.0,
            0.0,
            0,
            50,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::TaskStarvation {
                attempts: 50,
                accepted: 0,
                wanted: 3
            }
        ));
    }

    #[test]
    fn always_failing_method_has_zero_rate_and_spread() {
        let env = Env::new(EnvConfig::pointmass2d()).unwrap();
        let tasks = gen_tasks(env.config(), 4, Difficulty::Regular, 0.1, 0.0, 0, 1000).unwrap();
        let seeds: Vec<SeedOutcome> = (0..3)
            .map(|s| SeedOutcome {
                seed: s,
                success: vec![false; 4],
                first_success: vec![None; 4],
            })
            .collect();
        let r = BenchReport::new("none", EnvKind::Pointmass2d, &tasks, 0.05, seeds, 0.0).unwrap();
        assert_eq!((r.mean, r.std), (0.0, 0.0));
        assert!(r.render().contains("0.000 ± 0.000"));
    }

    #[test]
    fn rate_is_exact_fraction() {
        let s = SeedOutcome {
            seed: 0,
            success: vec![true, false, true, true],
            first_success: vec![Some(1), None, Some(2), Some(0)],
        };
        assert_eq!(s.rate(), 0.75);
        assert_eq!(mean_std(&[0.5, 1.0]), (0.75, 0.25));
    }

    #[test]
    fn missing_checkpoint_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = SeedModels::load(dir.path(), Method::Mbold).unwrap_err();
        match err {
            Error::MissingCheckpoint(p) => assert!(p.ends_with("ensemble.manifest")),
            other => panic!("{other}"),
        }
        let err = SeedModels::default()
            .evaluate(
                Method::L2,
                &TaskSet::from_pairs(&Env::new(EnvConfig::pointmass2d()).unwrap(), vec![]),
                &Config::default(),
                0,
            )
            .unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint(_)));
    }

    #[test]
    fn oracle_planner_solves_every_small_grid_task() {
        let cfg = EnvConfig::gridworld(4);
        let env = Env::new(cfg.clone()).unwrap();
        let table = value_iteration(&env, 0.8, 1.0, 10.0, 1e-10).unwrap();
        let model = ExactModel::new(cfg).unwrap();
        let cost = QCost { critic: &table };
        let cells = env.free_cells();
        let pairs = cells
            .iter()
            .flat_map(|&s| cells.iter().map(move |&g| (s, g)))
            .filter(|&(s, g)| bfs_distance(&env, s, g).is_some())
            .map(|(s, g)| (env.grid_state(s.0, s.1), env.grid_state(g.0, g.1)))
            .collect();
        let tasks = TaskSet::from_pairs(&env, pairs);
        let cem = CemConfig {
            n_samples: 60,
            ..CemConfig::default()
        };
        let out = evaluate_tasks(&env, &tasks, 0.5, 0, || {
            Mpc::new(&model, &cost, cem.clone())
        })
        .unwrap();
        assert_eq!(out.rate(), 1.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("dreamer".parse::<Method>().is_err());
    }
}

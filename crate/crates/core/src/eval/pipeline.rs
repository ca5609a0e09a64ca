use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;

use super::{bench_models, BenchReport, Method, SeedModels, TaskSet};
use crate::baselines::{gcbc_train, GcbcPolicy, TemporalRegressor};
use crate::config::Config;
use crate::data::{collect_random, OfflineDataset};
use crate::distance::train_distance;
use crate::dynamics::train_dynamics;
use crate::env::EnvKind;
use crate::error::Result;
use crate::rng;

/// Seed of the `i`-th evaluation run.
pub fn model_seed(cfg: &Config, i: usize) -> u64 {
    rng::derive_seed(cfg.eval.base_seed, i as u64)
}

pub fn collect(cfg: &Config) -> Result<OfflineDataset> {
    let c = &cfg.collect;
    collect_random(
        &cfg.env,
        c.n_episodes,
        &c.action_stdev,
        c.filter_beta,
        c.seed,
    )
}

/// The first part of the configured split.
pub fn training_split(cfg: &Config, dataset: &OfflineDataset) -> Result<OfflineDataset> {
    Ok(dataset
        .split(&cfg.collect.split, cfg.collect.seed)?
        .swap_remove(0))
}

const LOG_EVERY: usize = 1000;

/// Separately trainable parts of [`SeedModels`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Distance,
    Dynamics,
    Gcbc,
    Temporal,
}

impl Component {
    /// What `methods` need, in training order.
    pub fn needed_by(methods: &[Method]) -> Vec<Component> {
        let mut out = Vec::new();
        if methods.iter().any(|m| m.needs_distance()) {
            out.push(Component::Distance);
        }
        if methods.iter().any(|m| m.needs_dynamics()) {
            out.push(Component::Dynamics);
        }
        if methods.contains(&Method::Gcbc) {
            out.push(Component::Gcbc);
        }
        if methods.contains(&Method::Temporal) {
            out.push(Component::Temporal);
        }
        out
    }
}

/// Trains one component for `seed` into `m`, replacing what was there.
pub fn train_component(
    cfg: &Config,
    data: &OfflineDataset,
    part: Component,
    seed: u64,
    m: &mut SeedModels,
) -> Result<()> {
    let t0 = Instant::now();
    match part {
        Component::Distance => {
            m.distance = Some(train_distance(data, &cfg.distance, seed, |r| {
                if r.step % LOG_EVERY == 0 {
                    info!(
                        "distance seed {seed} step {}: bellman {:.4} actor {:.3} cql gap {:.3} alpha {:.3}",
                        r.step, r.q1_bellman, r.actor_loss, r.cql_r1, r.cql_alpha
                    );
                }
            })?);
        }
        Component::Dynamics => {
            m.dynamics = Some(train_dynamics(data, &cfg.dynamics, seed, |step, loss| {
                if (step + 1) % LOG_EVERY == 0 {
                    info!("dynamics seed {seed} step {}: loss {loss:.3e}", step + 1);
                }
            })?);
        }
        Component::Gcbc => {
            let g = &cfg.gcbc;
            let mut policy = GcbcPolicy::new(
                data.obs_dim(),
                data.action_dim(),
                g,
                &mut rng::derived(seed, 20),
            )?;
            let loss = gcbc_train(
                data,
                &mut policy,
                g.train_steps,
                g.batch_size,
                &mut rng::derived(seed, 21),
            )?;
            info!("gcbc seed {seed}: final loss {loss:.4}");
            m.gcbc = Some(policy);
        }
        Component::Temporal => {
            let t = &cfg.temporal;
            let mut reg = TemporalRegressor::new(data.obs_dim(), t, &mut rng::derived(seed, 30))?;
            let mut r = rng::derived(seed, 31);
            let mut loss = f64::NAN;
            for _ in 0..t.train_steps {
                loss = reg.train_step(data, t.batch_size, &mut r)?;
            }
            info!("temporal seed {seed}: final loss {loss:.4}");
            m.temporal = Some(reg);
        }
    }
    info!(
        "{part:?} seed {seed} trained in {:.1} s",
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Trains everything `methods` need for one seed.
pub fn train_models(
    cfg: &Config,
    data: &OfflineDataset,
    methods: &[Method],
    seed: u64,
) -> Result<SeedModels> {
    let mut m = SeedModels::default();
    for part in Component::needed_by(methods) {
        train_component(cfg, data, part, seed, &mut m)?;
    }
    Ok(m)
}

/// Loads `checkpoint_root/seed{i}` for every configured seed and evaluates
/// `method` on `tasks`.
pub fn run_benchmark(
    method: Method,
    tasks: &TaskSet,
    cfg: &Config,
    checkpoint_root: &Path,
) -> Result<BenchReport> {
    let loaded = (0..cfg.eval.n_seeds)
        .map(|i| {
            Ok((
                model_seed(cfg, i),
                SeedModels::load(&checkpoint_root.join(format!("seed{i}")), method)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(u64, &SeedModels)> = loaded.iter().map(|(s, m)| (*s, m)).collect();
    bench_models(method, &refs, tasks, cfg)
}

/// Paired reports from one varied component.
#[derive(Clone, Debug)]
pub struct AblationReport {
    pub name: String,
    pub variants: Vec<(String, BenchReport)>,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut out = format!("ablation {}\n", self.name);
        for (label, r) in &self.variants {
            let _ = writeln!(out, "\n[{label}]\n{}", r.render());
        }
        let _ = writeln!(out, "summary");
        for (label, r) in &self.variants {
            let _ = writeln!(out, "  {label:<24} {:.3} ± {:.3}", r.mean, r.std);
        }
        out
    }

    pub fn mean(&self, label: &str) -> Option<f64> {
        self.variants
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, r)| r.mean)
    }
}

fn relabel(mut r: BenchReport, label: &str) -> BenchReport {
    r.method = format!("{} ({label})", r.method);
    r
}

/// `cfg` with every relabeled goal drawn from the same trajectory.
pub fn mining_off(cfg: &Config) -> Config {
    let mut off = cfg.clone();
    off.distance.mix = 1.0;
    off
}

/// Retrains the distance with all-reached relabeling and compares against
/// the configured mixture. Dynamics are shared between the two arms.
pub fn ablate_mining(
    cfg: &Config,
    data: &OfflineDataset,
    tasks: &TaskSet,
) -> Result<AblationReport> {
    let off = mining_off(cfg);
    let mut on_models = Vec::new();
    let mut off_models = Vec::new();
    for i in 0..cfg.eval.n_seeds {
        let seed = model_seed(cfg, i);
        let on = train_models(cfg, data, &[Method::Mbold], seed)?;
        let off_m = SeedModels {
            distance: train_models(&off, data, &[Method::Qshooting], seed)?.distance,
            dynamics: on.dynamics.clone(),
            ..SeedModels::default()
        };
        on_models.push((seed, on));
        off_models.push((seed, off_m));
    }
    let on_refs: Vec<_> = on_models.iter().map(|(s, m)| (*s, m)).collect();
    let off_refs: Vec<_> = off_models.iter().map(|(s, m)| (*s, m)).collect();
    Ok(AblationReport {
        name: "negative mining".into(),
        variants: vec![
            (
                "mining on".into(),
                relabel(
                    bench_models(Method::Mbold, &on_refs, tasks, cfg)?,
                    "mining on",
                ),
            ),
            (
                "mining off".into(),
                relabel(
                    bench_models(Method::Mbold, &off_refs, tasks, &off)?,
                    "mining off",
                ),
            ),
        ],
    })
}

/// Evaluates one set of trained models at every horizon of
/// `cfg.eval.horizon_sweep`. Horizons shorter than `cem.replan_every` replan
/// once per horizon.
pub fn ablate_horizon(
    cfg: &Config,
    data: &OfflineDataset,
    tasks: &TaskSet,
) -> Result<AblationReport> {
    let models = (0..cfg.eval.n_seeds)
        .map(|i| {
            let seed = model_seed(cfg, i);
            Ok((seed, train_models(cfg, data, &[Method::Mbold], seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = models.iter().map(|(s, m)| (*s, m)).collect();
    let variants = cfg
        .eval
        .horizon_sweep
        .iter()
        .map(|&h| {
            let mut c = cfg.clone();
            c.cem.horizon = h;
            c.cem.replan_every = c.cem.replan_every.min(h);
            let label = format!("h = {h}");
            Ok((
                label.clone(),
                relabel(bench_models(Method::Mbold, &refs, tasks, &c)?, &label),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        name: "planning horizon".into(),
        variants,
    })
}

/// Collects a second dataset with the object initialized in
/// `cfg.eval.restricted_object_reset`, retrains on each, and evaluates both
/// on the same tasks.
pub fn ablate_reset(cfg: &Config, tasks: &TaskSet) -> Result<AblationReport> {
    let mut restricted = cfg.clone();
    if cfg.env.kind == EnvKind::Planarpush {
        let r = cfg.eval.restricted_object_reset;
        restricted.env.reset_region.truncate(2);
        restricted.env.reset_region.extend([r, r]);
    }
    restricted.validate()?;
    let mut variants = Vec::new();
    for (label, c) in [("full reset", cfg), ("restricted reset", &restricted)] {
        let data = training_split(c, &collect(c)?)?;
        let models = (0..cfg.eval.n_seeds)
            .map(|i| {
                let seed = model_seed(cfg, i);
                Ok((seed, train_models(c, &data, &[Method::Mbold], seed)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = models.iter().map(|(s, m)| (*s, m)).collect();
        // Evaluation always uses the unrestricted environment.
        variants.push((
            label.to_string(),
            relabel(bench_models(Method::Mbold, &refs, tasks, cfg)?, label),
        ));
    }
    Ok(AblationReport {
        name: "object reset region".into(),
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Difficulty;
    use crate::env::EnvConfig;
    use crate::eval::gen_tasks;

    fn tiny(env: EnvConfig) -> Config {
        let mut c = Config::for_env(env);
        c.collect.n_episodes = 20;
        c.distance.train_steps = 20;
        c.distance.critic_hidden = vec![8];
        c.distance.actor_hidden = vec![8];
        c.distance.batch_size = 8;
        c.dynamics.train_steps = 20;
        c.dynamics.hidden = vec![8];
        c.gcbc.train_steps = 20;
        c.gcbc.hidden = vec![8];
        c.temporal.train_steps = 20;
        c.temporal.hidden = vec![8];
        c.cem.n_samples = 20;
        c.cem.n_iterations = 1;
        c.eval.n_seeds = 2;
        c.eval.n_tasks = 2;
        c.env.max_episode_len = 6;
        c
    }

    #[test]
    fn benchmark_from_saved_checkpoints_is_reproducible() {
        let cfg = tiny(EnvConfig::pointmass2d());
        let data = training_split(&cfg, &collect(&cfg).unwrap()).unwrap();
        let tasks = gen_tasks(&cfg.env, 2, Difficulty::Regular, 0.01, 0.0, 0, 100).unwrap();
        let root = tempfile::tempdir().unwrap();
        for i in 0..cfg.eval.n_seeds {
            train_models(&cfg, &data, &Method::ALL, model_seed(&cfg, i))
                .unwrap()
                .save(&root.path().join(format!("seed{i}")))
                .unwrap();
        }
        for m in Method::ALL {
            let a = run_benchmark(m, &tasks, &cfg, root.path()).unwrap();
            let b = run_benchmark(m, &tasks, &cfg, root.path()).unwrap();
            assert_eq!(a.seeds, b.seeds, "{m}");
            assert_eq!(a.seeds.len(), 2);
            assert!(a.rates().iter().all(|r| (0.0..=1.0).contains(r)));
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_benchmark(Method::Gcbc, &tasks, &cfg, empty.path()),
            Err(crate::Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn mining_arms_differ_only_in_mix() {
        let cfg = tiny(EnvConfig::planarpush());
        let data = training_split(&cfg, &collect(&cfg).unwrap()).unwrap();
        let tasks = gen_tasks(&cfg.env, 2, Difficulty::Regular, 0.0, 0.0, 0, 100).unwrap();
        let r = ablate_mining(&cfg, &data, &tasks).unwrap();
        assert_eq!(r.variants.len(), 2);
        assert!(r.mean("mining on").is_some() && r.mean("mining off").is_some());
        let mut off = mining_off(&cfg);
        assert_ne!(off, cfg);
        off.distance.mix = cfg.distance.mix;
        assert_eq!(off, cfg);
    }

    #[test]
    fn horizon_sweep_labels_every_value() {
        let mut cfg = tiny(EnvConfig::pointmass2d());
        cfg.eval.horizon_sweep = vec![1, 3, 13];
        let data = training_split(&cfg, &collect(&cfg).unwrap()).unwrap();
        let tasks = gen_tasks(&cfg.env, 2, Difficulty::Regular, 0.0, 0.0, 0, 100).unwrap();
        let r = ablate_horizon(&cfg, &data, &tasks).unwrap();
        let labels: Vec<_> = r.variants.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["h = 1", "h = 3", "h = 13"]);
        assert!(r.render().contains("summary"));
    }

    #[test]
    fn reset_ablation_trains_on_restricted_objects() {
        let cfg = tiny(EnvConfig::planarpush());
        let tasks = gen_tasks(&cfg.env, 2, Difficulty::Regular, 0.0, 0.0, 0, 100).unwrap();
        let r = ablate_reset(&cfg, &tasks).unwrap();
        assert_eq!(r.variants.len(), 2);
        assert_eq!(r.variants[1].1.n_tasks, 2);
    }
}

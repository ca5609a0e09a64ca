//! One TOML document carrying every tunable of a run.
//!
//! Missing sections and keys fall back to their defaults, so an empty file
//! is a valid configuration. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{GcbcConfig, TemporalConfig};
use crate::distance::DistanceConfig;
use crate::dynamics::DynamicsConfig;
use crate::env::{EnvConfig, EnvKind, Interval};
use crate::error::{Error, Result};
use crate::planner::CemConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub n_episodes: usize,
    /// Per-dimension standard deviation of the noise innovations.
    pub action_stdev: Vec<f64>,
    pub filter_beta: f64,
    pub seed: u64,
    /// Train / validation / test fractions over trajectories.
    pub split: Vec<f64>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_episodes: 2000,
            action_stdev: vec![0.6, 0.6],
            filter_beta: 0.5,
            seed: 0,
            split: vec![0.9, 0.05, 0.05],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Regular,
    Hard,
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Difficulty::Regular => "regular",
            Difficulty::Hard => "hard",
        })
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Difficulty::Regular),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!("unknown difficulty {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_tasks: usize,
    pub n_seeds: usize,
    /// Model seeds are derived from this one, one per evaluation seed.
    pub base_seed: u64,
    pub task_seed: u64,
    pub difficulty: Difficulty,
    pub min_object_move: f64,
    pub min_arm_object_gap: f64,
    /// Rollouts tried per requested task before task generation gives up.
    pub task_attempts_per_task: usize,
    /// Overrides the environment's success distance when set.
    pub success_threshold: Option<f64>,
    pub q_shooting_actions: usize,
    pub horizon_sweep: Vec<usize>,
    /// Object initialization square used by the restricted-reset ablation.
    pub restricted_object_reset: Interval,
    pub heatmap_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_tasks: 100,
            n_seeds: 5,
            base_seed: 0,
            task_seed: 12_345,
            difficulty: Difficulty::Regular,
            min_object_move: 0.1,
            min_arm_object_gap: 0.15,
            task_attempts_per_task: 10_000,
            success_threshold: None,
            q_shooting_actions: 100,
            horizon_sweep: vec![3, 7, 13],
            restricted_object_reset: [-0.05, 0.05],
            heatmap_resolution: 21,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: EnvConfig,
    pub collect: CollectConfig,
    pub distance: DistanceConfig,
    pub dynamics: DynamicsConfig,
    pub cem: CemConfig,
    pub gcbc: GcbcConfig,
    pub temporal: TemporalConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            offset: e.span().map_or_else(
                || "unknown".into(),
                |s| format!("bytes {}..{}", s.start, s.end),
            ),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { offset, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                offset,
                msg,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Defaults with the environment swapped for one of the presets.
    /// Without an underactuated component the actuated key is the whole
    /// state, so those presets relabel from the same trajectory only.
    pub fn for_env(env: EnvConfig) -> Self {
        let mut cfg = Self {
            env,
            ..Self::default()
        };
        if cfg.env.kind != EnvKind::Planarpush {
            cfg.distance.mix = 1.0;
        }
        cfg
    }

    pub fn success_threshold(&self) -> f64 {
        self.eval
            .success_threshold
            .unwrap_or_else(|| self.env.default_success_threshold())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.env.validate()?;
        self.distance.validate()?;
        self.cem.validate(self.env.action_dim)?;
        if self.collect.action_stdev.len() != self.env.action_dim {
            return bad(format!(
                "collect.action_stdev has {} entries for {} action dimensions",
                self.collect.action_stdev.len(),
                self.env.action_dim
            ));
        }
        if !(self.collect.filter_beta > 0.0 && self.collect.filter_beta <= 1.0) {
            return bad(format!(
                "collect.filter_beta {} outside (0, 1]",
                self.collect.filter_beta
            ));
        }
        let total: f64 = self.collect.split.iter().sum();
        if self.collect.split.is_empty()
            || self.collect.split.iter().any(|&f| f < 0.0)
            || (total - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "collect.split {:?} must be nonnegative and sum to 1",
                self.collect.split
            ));
        }
        if self.eval.n_tasks == 0 || self.eval.n_seeds == 0 {
            return bad("eval.n_tasks and eval.n_seeds must be positive".into());
        }
        if self.eval.success_threshold.is_some_and(|t| !(t > 0.0)) {
            return bad("eval.success_threshold must be positive".into());
        }
        if self.eval.horizon_sweep.contains(&0) {
            return bad("eval.horizon_sweep entries must be positive".into());
        }
        let [lo, hi] = self.eval.restricted_object_reset;
        if lo > hi {
            return bad(format!(
                "eval.restricted_object_reset [{lo}, {hi}] is empty"
            ));
        }
        if self.temporal.maxdist == 0 {
            return bad("temporal.maxdist must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::for_env(EnvConfig::gridworld(6));
        let text = cfg.to_toml_string();
        assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
        for key in [
            "gamma",
            "polyak",
            "cql_tau",
            "p_geom",
            "knn_k",
            "horizon",
            "n_samples",
            "elite_fraction",
            "replan_every",
            "filter_beta",
            "maxdist",
        ] {
            assert!(
                text.contains(&format!("{key} = ")),
                "{key} missing from\n{text}"
            );
        }
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = Config::from_toml_str("[cem]\nhorizon = 7\n[distance]\nmix = 1.0\n").unwrap();
        assert_eq!(cfg.cem.horizon, 7);
        assert_eq!(cfg.cem.n_samples, 200);
        assert_eq!(cfg.distance.mix, 1.0);
        assert_eq!(cfg.distance.gamma, 0.8);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            Config::from_toml_str("[cem]\nhorizn = 7\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Config::from_toml_str("[distance]\ngamma = 1.5\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Config::from_toml_str("[collect]\nsplit = [0.5, 0.2]\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn threshold_override() {
        let mut cfg = Config::for_env(EnvConfig::gridworld(4));
        assert_eq!(cfg.success_threshold(), 0.5);
        cfg.eval.success_threshold = Some(0.25);
        assert_eq!(cfg.success_threshold(), 0.25);
    }

    #[test]
    fn mining_only_where_there_is_an_object() {
        assert_eq!(Config::for_env(EnvConfig::planarpush()).distance.mix, 0.5);
        assert_eq!(Config::for_env(EnvConfig::pointmass2d()).distance.mix, 1.0);
        assert_eq!(Config::for_env(EnvConfig::gridworld(6)).distance.mix, 1.0);
    }
}

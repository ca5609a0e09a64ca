use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use goalreach::data::OfflineDataset;
use goalreach::env::Env;
use goalreach::eval::{self, Component, SeedModels};
use goalreach::{Config, Difficulty, EnvConfig, Method, QEnsemble};

#[derive(Parser)]
#[command(
    name = "goalreach",
    version,
    about = "Offline goal reaching with learned distances and CEM planning"
)]
struct Cli {
    /// TOML configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Environment preset, used when no configuration file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Planarpush)]
    env: Preset,

    /// Side length for the gridworld preset.
    #[arg(long, global = true, default_value_t = 6)]
    grid_size: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Gridworld,
    Pointmass2d,
    Planarpush,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    PrintConfig,
    /// Roll the filtered random policy and save the dataset.
    Collect {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train forward dynamics models, one per seed.
    TrainDynamics(TrainArgs),
    /// Train goal-conditioned Q ensembles, one per seed.
    TrainDistance(TrainArgs),
    /// Train a behavior-cloning or temporal-distance baseline.
    TrainBaseline {
        #[arg(long, value_parser = parse_baseline)]
        method: Method,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Success rates of one method on a generated task set.
    Eval {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Directory holding `seed0`, `seed1`, ...
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, value_parser = parse_difficulty)]
        difficulty: Option<Difficulty>,
        /// Also write the full report, per-task outcomes included, as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Retrain or re-plan with one component varied.
    Ablate {
        #[arg(value_enum)]
        kind: Ablation,
        /// Training dataset; collected from the configuration when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_difficulty)]
        difficulty: Option<Difficulty>,
    },
    /// Distance from every swept position to a goal, as CSV.
    Heatmap {
        /// Goal coordinates, actuated first (`x,y` or `x,y,ox,oy`).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        goal: Vec<f64>,
        /// Agent position held fixed while the object is swept.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        fixed: Vec<f64>,
        /// A single seed's checkpoint directory.
        #[arg(long, conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use exact BFS distances (gridworld only).
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabular identity, reward inversion and oracle-planner checks.
    OracleCheck {
        #[arg(long, default_value_t = 56)]
        worlds: usize,
        #[arg(long, default_value_t = 8)]
        max_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Planner check grid side; 0 skips it.
        #[arg(long, default_value_t = 6)]
        planner_grid: usize,
        #[arg(long, default_value_t = 13)]
        planner_max_dist: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint root; seed `i` goes to `<out>/seed<i>`.
    #[arg(long)]
    out: PathBuf,
    /// Number of seeds; defaults to `eval.n_seeds`.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    Mining,
    Horizon,
    Reset,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: goalreach::Error| e.to_string())
}

fn parse_baseline(s: &str) -> Result<Method, String> {
    match parse_method(s)? {
        m @ (Method::Gcbc | Method::Temporal) => Ok(m),
        m => Err(format!("{m} is not a trainable baseline (gcbc, temporal)")),
    }
}

fn parse_difficulty(s: &str) -> Result<Difficulty, String> {
    s.parse().map_err(|e: goalreach::Error| e.to_string())
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    match &cli.config {
        Some(p) => Ok(Config::load(p)?),
        None => {
            let env = match cli.env {
                Preset::Gridworld => EnvConfig::gridworld(cli.grid_size),
                Preset::Pointmass2d => EnvConfig::pointmass2d(),
                Preset::Planarpush => EnvConfig::planarpush(),
            };
            let cfg = Config::for_env(env);
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn load_data(path: &Path) -> anyhow::Result<OfflineDataset> {
    goalreach::data::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn train(cfg: &Config, args: &TrainArgs, part: Component) -> anyhow::Result<()> {
    let data = eval::training_split(cfg, &load_data(&args.data)?)?;
    std::fs::create_dir_all(&args.out)?;
    cfg.save(&args.out.join("config.toml"))?;
    for i in 0..args.seeds.unwrap_or(cfg.eval.n_seeds) {
        let seed = eval::model_seed(cfg, i);
        let mut m = SeedModels::default();
        eval::train_component(cfg, &data, part, seed, &mut m)?;
        let dir = args.out.join(format!("seed{i}"));
        m.save(&dir)?;
        println!("{part:?} seed {i} saved to {}", dir.display());
    }
    Ok(())
}

fn oracle_check(
    cfg: &Config,
    worlds: usize,
    max_size: usize,
    seed: u64,
    planner_grid: usize,
    planner_max_dist: usize,
) -> anyhow::Result<bool> {
    let mut ok = true;
    let mut line = |name: &str, pass: bool, detail: String| {
        ok &= pass;
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };

    let sweep = eval::identity_sweep(worlds, max_size, seed, 1e-6)?;
    let worst = sweep
        .iter()
        .map(|(_, r)| r.max_deviation)
        .fold(0.0, f64::max);
    let checked: usize = sweep.iter().map(|(_, r)| r.checked).sum();
    line(
        "identity",
        sweep.iter().all(|(_, r)| r.passed),
        format!(
            "{} worlds, {checked} entries, max deviation {worst:.2e}",
            sweep.len()
        ),
    );

    let scale = cfg.distance.scale();
    let inv = eval::inversion_error(&scale, 20);
    line(
        "inversion",
        inv < 1e-9,
        format!("max error {inv:.2e} for d = 0..20"),
    );
    let chain = eval::chain_identity(10, &scale, 1e-9)?;
    line(
        "chain",
        chain.passed,
        format!("max deviation {:.2e}", chain.max_deviation),
    );

    if planner_grid > 0 {
        let grid = EnvConfig::gridworld(planner_grid);
        let out = eval::oracle_planner(&grid, &scale, planner_max_dist, &cfg.cem, seed)?;
        let wins = out.success.iter().filter(|&&s| s).count();
        line(
            "oracle planner",
            wins == out.success.len(),
            format!(
                "{wins}/{} tasks on {planner_grid}x{planner_grid}",
                out.success.len()
            ),
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::PrintConfig => print!("{}", cfg.to_toml_string()),
        Command::Collect { out } => {
            let data = eval::collect(&cfg)?;
            goalreach::data::save(&data, &out)?;
            println!(
                "{} trajectories, {} transitions saved to {}",
                data.trajectories.len(),
                data.total_transitions(),
                out.display()
            );
        }
        Command::TrainDynamics(args) => train(&cfg, &args, Component::Dynamics)?,
        Command::TrainDistance(args) => train(&cfg, &args, Component::Distance)?,
        Command::TrainBaseline {
            method,
            train: args,
        } => {
            let part = if method == Method::Gcbc {
                Component::Gcbc
            } else {
                Component::Temporal
            };
            train(&cfg, &args, part)?
        }
        Command::Eval {
            method,
            checkpoints,
            difficulty,
            json,
        } => {
            let tasks = eval::gen_tasks_from(&cfg, difficulty.unwrap_or(cfg.eval.difficulty))?;
            info!("{} tasks from {} rollouts", tasks.len(), tasks.attempts);
            let report = eval::run_benchmark(method, &tasks, &cfg, &checkpoints)?;
            print!("{}", report.render());
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&report)?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Ablate {
            kind,
            data,
            difficulty,
        } => {
            let tasks = eval::gen_tasks_from(&cfg, difficulty.unwrap_or(cfg.eval.difficulty))?;
            let train_data = || -> anyhow::Result<OfflineDataset> {
                let raw = match &data {
                    Some(p) => load_data(p)?,
                    None => eval::collect(&cfg)?,
                };
                Ok(eval::training_split(&cfg, &raw)?)
            };
            let report = match kind {
                Ablation::Mining => eval::ablate_mining(&cfg, &train_data()?, &tasks)?,
                Ablation::Horizon => eval::ablate_horizon(&cfg, &train_data()?, &tasks)?,
                Ablation::Reset => eval::ablate_reset(&cfg, &tasks)?,
            };
            print!("{}", report.render());
        }
        Command::Heatmap {
            goal,
            fixed,
            checkpoint,
            oracle,
            resolution,
            out,
        } => {
            let env = Env::new(cfg.env.clone())?;
            let n_act = env.config().arena_bounds.len();
            if goal.len() < n_act {
                bail!("--goal needs at least {n_act} coordinates");
            }
            let goal_obs = env.observe_coords(&goal[..n_act], &goal[n_act..]).0;
            let res = resolution.unwrap_or(cfg.eval.heatmap_resolution);
            let m = if oracle {
                eval::heatmap(&env, &goal_obs, res, &fixed, eval::oracle_distance(&env))?
            } else {
                let Some(dir) = checkpoint else {
                    bail!("give --checkpoint or --oracle");
                };
                let critic = QEnsemble::load(&dir)?;
                eval::heatmap(&env, &goal_obs, res, &fixed, eval::critic_distance(&critic))?
            };
            eval::write_csv(&m, &out)?;
            let (r, c) = eval::heatmap_argmin(&m).context("heatmap has no finite cell")?;
            println!(
                "{res}x{res} heatmap written to {}; minimum at row {r}, column {c}",
                out.display()
            );
        }
        Command::OracleCheck {
            worlds,
            max_size,
            seed,
            planner_grid,
            planner_max_dist,
        } => {
            if !oracle_check(&cfg, worlds, max_size, seed, planner_grid, planner_max_dist)? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

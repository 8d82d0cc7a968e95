//! Command-line front end: environment generation, oracle training,
//! evaluation reports, dataset replay and the live feedback service.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use apple_core::apple::{FeedbackDataset, FeedbackSource, LearnError, ParamChoice, Policy, PolicyCheckpoint};
use apple_core::evalx::{pairwise_report, EvalError, MethodRuns};
use apple_core::gateway::{
    evaluate, generate_benchmark, open_run, serve, train, ContinuousSelector, DiscreteSelector, EpisodeConfig,
    Exploration, FeedbackMode, FixedParams, GatewayError, ParamSelector, TrainRun, CHECKPOINT_FILE,
};
use apple_core::oracle::{Feedback, Levels};
use apple_core::planner::{ParameterLibrary, PlannerParams, RobotState};
use apple_core::rng::{child_seed, rng_for, stream};
use apple_core::world::{Difficulty, OccupancyGrid, WorldError};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use thiserror::Error;

pub use config::{LearnerMode, RunConfig};

/// Salts separating the training and evaluation seeds from the
/// environment seed.
const TRAIN_SALT: u64 = 0x7261_696e;
const EVAL_SALT: u64 = 0x6576_616c;

pub const ENV_EXTENSION: &str = "grid";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn from_io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::NotFound(path.to_path_buf())
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "apple", version, about = "Adaptive planner parameter learning from evaluative feedback")]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate seeded cave environments as grid text files.
    GenEnvs(GenEnvsArgs),
    /// Train a parameter policy from oracle feedback.
    Train(TrainArgs),
    /// Compare a trained policy with the default parameters.
    Eval(EvalArgs),
    /// Run the live human-feedback service.
    Serve(ServeArgs),
    /// Summarize a feedback dataset log.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EnvSource {
    /// Number of environments to generate.
    #[arg(long = "envs")]
    pub envs: Option<usize>,
    /// Read environments from `*.grid` files instead of generating them.
    #[arg(long, conflicts_with = "envs")]
    pub env_dir: Option<PathBuf>,
    #[arg(long)]
    pub difficulty: Option<Difficulty>,
}

#[derive(Debug, Args)]
pub struct GenEnvsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub difficulty: Option<Difficulty>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainMode {
    Oracle,
    Human,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub envs: EnvSource,
    #[arg(long, value_enum, default_value = "oracle")]
    pub mode: TrainMode,
    /// Feedback levels: an integer >= 2 or `continuous`.
    #[arg(long)]
    pub levels: Option<Levels>,
    #[arg(long, value_enum)]
    pub learner: Option<LearnerMode>,
    /// Feedback records to collect.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub envs: EnvSource,
    /// Checkpoint file or training output directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Markdown report; a JSON summary is written next to it.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub envs: EnvSource,
    /// Checkpoint directory; a fresh policy is created when it holds none.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub levels: Option<u32>,
    #[arg(long)]
    pub time_scale: Option<f64>,
    #[arg(long)]
    pub max_episodes: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Dataset log (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
    /// Also score a checkpoint's predictions against the log.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenEnvs(a) => gen_envs(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Replay(a) => replay_cmd(a),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_env_source(cfg: &mut RunConfig, src: &EnvSource) {
    if let Some(n) = src.envs {
        cfg.world.envs = n;
    }
    if let Some(d) = src.difficulty {
        cfg.world.set_difficulty(d);
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::from_io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        io(dir, std::fs::create_dir_all(dir))?;
    }
    io(path, std::fs::write(path, text))
}

fn env_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("env_{i:03}.{ENV_EXTENSION}"))
}

/// Environments from `env_dir` when given, else generated from the seed.
pub fn load_envs(cfg: &RunConfig, env_dir: Option<&Path>) -> Result<Vec<OccupancyGrid>, CliError> {
    match env_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = io(dir, std::fs::read_dir(dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == ENV_EXTENSION))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::NotFound(dir.join(format!("*.{ENV_EXTENSION}"))));
            }
            paths
                .iter()
                .map(|p| Ok(OccupancyGrid::from_text(&io(p, std::fs::read_to_string(p))?)?))
                .collect()
        }
        None => Ok(generate_benchmark(cfg.world.envs, &cfg.world.ca(), &cfg.planner, cfg.seed)?.grids),
    }
}

#[derive(Serialize)]
struct EnvManifest {
    seed: u64,
    fill_prob: f64,
    env_seeds: Vec<u64>,
}

fn gen_envs(a: GenEnvsArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.n {
        cfg.world.envs = n;
    }
    if let Some(d) = a.difficulty {
        cfg.world.set_difficulty(d);
    }
    let out = a.out.unwrap_or_else(|| cfg.out.join("envs"));
    cfg.validate()?;
    let bench = generate_benchmark(cfg.world.envs, &cfg.world.ca(), &cfg.planner, cfg.seed)?;
    io(&out, std::fs::create_dir_all(&out))?;
    for (i, g) in bench.grids.iter().enumerate() {
        write_file(&env_file(&out, i), &g.to_text())?;
    }
    let manifest = EnvManifest {
        seed: cfg.seed,
        fill_prob: cfg.world.fill_prob,
        env_seeds: bench.seeds,
    };
    write_file(&out.join("envs.json"), &serde_json::to_string_pretty(&manifest).expect("manifest"))?;
    println!("wrote {} environments to {}", bench.grids.len(), out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    if a.mode == TrainMode::Human {
        return Err(CliError::Usage(
            "--mode human: human feedback is collected by `apple serve`".into(),
        ));
    }
    let mut cfg = load_config(&a.common)?;
    apply_env_source(&mut cfg, &a.envs);
    if let Some(l) = a.levels {
        cfg.oracle.levels = l;
    }
    if let Some(m) = a.learner {
        cfg.learner.mode = m;
    }
    if let Some(b) = a.budget {
        cfg.train.feedback_budget = b;
    }
    if let Some(o) = a.out {
        cfg.out = o;
    }
    cfg.validate()?;
    let (library, bounds) = cfg.library()?;
    let envs = load_envs(&cfg, a.envs.env_dir.as_deref())?;
    let fresh = cfg.fresh_policy(&library, &bounds, cfg.oracle.levels)?;
    let (ck, mut dataset) = open_run(&cfg.out, || Ok(fresh), cfg.train.dataset_capacity)?;
    check_policy(&ck, &library, &cfg)?;
    if ck.feedback_count > 0 {
        info!("resuming at {} records", ck.feedback_count);
    }
    let run = TrainRun {
        library: &library,
        episode: EpisodeConfig {
            mode: FeedbackMode::Oracle,
            explore: true,
            ..cfg.episode.clone()
        },
        planner: cfg.planner.clone(),
        oracle: cfg.oracle.clone(),
        train: cfg.train.clone(),
        seed: child_seed(cfg.seed, TRAIN_SALT),
        out: Some(cfg.out.clone()),
    };
    let (ck, report) = train(&envs, ck, &mut dataset, &run)?;
    write_file(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    write_file(
        &cfg.out.join("train_report.json"),
        &serde_json::to_string_pretty(&report).expect("report"),
    )?;
    println!(
        "{} records, {} episodes ({} success, {} collision, {} timeout), {} gradient steps -> {}",
        ck.feedback_count,
        report.episodes,
        report.successes,
        report.collisions,
        report.timeouts,
        report.gradient_steps,
        cfg.out.display()
    );
    Ok(())
}

fn check_policy(ck: &PolicyCheckpoint, library: &ParameterLibrary, cfg: &RunConfig) -> Result<(), CliError> {
    match (&ck.policy, cfg.learner.mode) {
        (Policy::Discrete(p), LearnerMode::Discrete) => {
            if p.library_size() != library.len() {
                return Err(CliError::Config(format!(
                    "checkpoint has {} heads, library {} entries",
                    p.library_size(),
                    library.len()
                )));
            }
            if p.levels() != cfg.oracle.levels {
                return Err(CliError::Config(format!(
                    "checkpoint predicts {} levels, config asks for {}",
                    p.levels(),
                    cfg.oracle.levels
                )));
            }
            Ok(())
        }
        (Policy::Continuous(_), LearnerMode::Continuous) => Ok(()),
        _ => Err(CliError::Config("checkpoint learner does not match learner.mode".into())),
    }
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_checkpoint(p: &Path) -> Result<PolicyCheckpoint, CliError> {
    let path = checkpoint_path(p);
    if !path.exists() {
        return Err(CliError::NotFound(path));
    }
    Ok(PolicyCheckpoint::load(&path)?)
}

/// Greedy selector for a trained policy.
enum Trained<'a> {
    Discrete(DiscreteSelector<'a>),
    Continuous(ContinuousSelector<'a>),
}

impl ParamSelector for Trained<'_> {
    fn select(&mut self, state: &RobotState) -> Result<(ParamChoice, PlannerParams), LearnError> {
        match self {
            Trained::Discrete(s) => s.select(state),
            Trained::Continuous(s) => s.select(state),
        }
    }
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    apply_env_source(&mut cfg, &a.envs);
    if let Some(r) = a.runs {
        cfg.eval.runs = r;
    }
    cfg.validate()?;
    let ck = load_checkpoint(&a.ckpt)?;
    let (library, _) = cfg.library()?;
    if let Policy::Discrete(p) = &ck.policy {
        if p.library_size() != library.len() {
            return Err(CliError::Config(format!(
                "checkpoint has {} heads, library {} entries",
                p.library_size(),
                library.len()
            )));
        }
    }
    let envs = load_envs(&cfg, a.envs.env_dir.as_deref())?;
    let episode = EpisodeConfig {
        mode: FeedbackMode::Oracle,
        explore: false,
        ..cfg.episode.clone()
    };
    let seed = child_seed(cfg.seed, EVAL_SALT);
    let runs = cfg.eval.runs;
    let baseline = evaluate(&envs, runs, &episode, &cfg.planner, seed, |_| FixedParams::library_default(&library))?;
    let trained = evaluate(&envs, runs, &episode, &cfg.planner, seed, |s| match &ck.policy {
        Policy::Discrete(p) => Trained::Discrete(DiscreteSelector {
            policy: p,
            library: &library,
            exploration: Exploration::Greedy,
            rng: rng_for(s, stream::EXPLORATION),
        }),
        Policy::Continuous(p) => Trained::Continuous(ContinuousSelector {
            policy: p,
            stochastic: false,
            rng: rng_for(s, stream::EXPLORATION),
        }),
    })?;
    let methods = [
        MethodRuns::from_eval("APPLE", &trained),
        MethodRuns::from_eval("Default", &baseline),
    ];
    let report = pairwise_report(&methods, cfg.eval.alpha)?;
    let md_path = a.report.unwrap_or_else(|| cfg.out.join("report.md"));
    let markdown = report.to_markdown();
    write_file(&md_path, &markdown)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        report: &'a apple_core::evalx::PairwiseReport,
        runs: &'a [MethodRuns],
    }
    let json = serde_json::to_string_pretty(&Summary {
        report: &report,
        runs: &methods,
    })
    .expect("summary");
    write_file(&md_path.with_extension("json"), &json)?;
    print!("{markdown}");
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    apply_env_source(&mut cfg, &a.envs);
    if let Some(p) = a.port {
        cfg.serve.port = p;
    }
    if let Some(l) = a.levels {
        cfg.serve.levels = l;
    }
    if let Some(t) = a.time_scale {
        cfg.serve.time_scale = t;
    }
    if let Some(m) = a.max_episodes {
        cfg.serve.max_episodes = m;
    }
    cfg.validate()?;
    let (library, bounds) = cfg.library()?;
    let path = checkpoint_path(&a.ckpt);
    let ck = if path.exists() {
        PolicyCheckpoint::load(&path)?
    } else {
        cfg.fresh_policy(&library, &bounds, Levels::Discrete(cfg.serve.levels))?
    };
    let out = if a.ckpt.extension().is_some_and(|e| e == "json") {
        a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        a.ckpt.clone()
    };
    let envs = load_envs(&cfg, a.envs.env_dir.as_deref())?;
    let handle = serve(
        ck,
        library,
        envs,
        cfg.planner.clone(),
        cfg.serve_config()?,
        &format!("{}:{}", a.host, cfg.serve.port),
        out.clone(),
    )?;
    println!("ws://{} session {}", handle.local_addr(), handle.session_id());
    let ck = handle.join()?;
    println!("{} records -> {}", ck.feedback_count, out.display());
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct ReplaySummary {
    records: usize,
    human: usize,
    auto_positive: usize,
    oracle: usize,
    /// Count per level index.
    levels: Vec<usize>,
    /// Records and mean level per library index.
    by_theta: Vec<(usize, usize, f64)>,
    explicit_params: usize,
    mean_scalar: Option<f64>,
    /// Mean |predicted - recorded| level of the checkpoint's chosen head.
    prediction_error: Option<f64>,
}

fn replay_cmd(a: ReplayArgs) -> Result<(), CliError> {
    if !a.log.exists() {
        return Err(CliError::NotFound(a.log));
    }
    let ds = FeedbackDataset::load(&a.log, usize::MAX)?;
    let mut s = ReplaySummary {
        records: ds.len(),
        ..ReplaySummary::default()
    };
    let mut theta: Vec<(usize, f64)> = Vec::new();
    let mut scalars = Vec::new();
    for r in ds.iter() {
        match r.source {
            FeedbackSource::Human => s.human += 1,
            FeedbackSource::AutoPositive => s.auto_positive += 1,
            FeedbackSource::Oracle => s.oracle += 1,
        }
        let value = match r.feedback {
            Feedback::Level(l) => {
                let l = l as usize;
                if s.levels.len() <= l {
                    s.levels.resize(l + 1, 0);
                }
                s.levels[l] += 1;
                l as f64
            }
            Feedback::Value(v) => {
                scalars.push(v);
                v
            }
        };
        match r.params {
            ParamChoice::Index(i) => {
                if theta.len() <= i {
                    theta.resize(i + 1, (0, 0.0));
                }
                theta[i].0 += 1;
                theta[i].1 += value;
            }
            ParamChoice::Values(_) => s.explicit_params += 1,
        }
    }
    s.by_theta = theta
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _))| *n > 0)
        .map(|(i, (n, sum))| (i, n, sum / n as f64))
        .collect();
    if !scalars.is_empty() {
        s.mean_scalar = Some(scalars.iter().sum::<f64>() / scalars.len() as f64);
    }
    if let Some(p) = &a.ckpt {
        let ck = load_checkpoint(p)?;
        if let Policy::Discrete(policy) = &ck.policy {
            let mut err = 0.0;
            let mut n = 0usize;
            for r in ds.iter() {
                if let (ParamChoice::Index(i), Feedback::Level(l)) = (r.params, r.feedback) {
                    let scores = policy.predict(&r.state)?;
                    if let Some(v) = scores.get(i) {
                        err += (v - l as f64).abs();
                        n += 1;
                    }
                }
            }
            if n > 0 {
                s.prediction_error = Some(err / n as f64);
            }
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s).expect("summary"));
    } else {
        println!("{} records: {} oracle, {} human, {} auto-positive", s.records, s.oracle, s.human, s.auto_positive);
        if !s.levels.is_empty() {
            let parts: Vec<String> = s.levels.iter().enumerate().map(|(l, n)| format!("{l}: {n}")).collect();
            println!("levels  {}", parts.join("  "));
        }
        if let Some(m) = s.mean_scalar {
            println!("mean scalar feedback {m:.4}");
        }
        for (i, n, mean) in &s.by_theta {
            println!("theta {:<2} {:>8} records  mean {:.3}", i + 1, n, mean);
        }
        if s.explicit_params > 0 {
            println!("{} records with explicit parameter values", s.explicit_params);
        }
        if let Some(e) = s.prediction_error {
            println!("mean |predicted - recorded| level {e:.3}");
        }
    }
    Ok(())
}

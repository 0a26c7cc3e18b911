//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed check or other runtime error, 2 bad config
//! or usage, 3 non-finite values during training, 4 checkpoint does not fit
//! the config, 5 output directory not writable.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig};
use crate::encoders::ActionDistribution;
use crate::env::Env;
use crate::gradcheck::{gradcheck, GradcheckOptions};
use crate::numerics::{Checkpoint, NumericsError, ParamStore};
use crate::parallel::Executor;
use crate::ppo::{evaluate_policy, Setup, TrainError};
use crate::train::{initial_params, train};

/// Overrides the directory that relative `output_dir` values resolve against.
pub const OUTPUT_ROOT_ENV: &str = "LANGREACH_OUTPUT_ROOT";

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_OUTPUT: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "langreach", version, about = "Instruction-following reaching agents trained with PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for rollout collection and evaluation.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory (default: the config's output_dir under the output root).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy from scratch.
    Train {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Deterministic evaluation of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Number of episodes (default: the config's eval_episodes).
        #[arg(long)]
        episodes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write one episode of the deterministic policy as PPM frames.
    RenderRollout {
        checkpoint: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        /// Experiment whose network dimensions are checked (default: built-in desk setup).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::NonFinite { .. } => EXIT_NON_FINITE,
            TrainError::Numerics(NumericsError::NonFinite(_)) => EXIT_NON_FINITE,
            TrainError::Io { .. } => EXIT_OUTPUT,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

/// The experiment behind `gradcheck` when no config is given.
pub const DESK_CONFIG: &str = include_str!("../../../configs/exp1.cfg");

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        root.join(&cfg.output_dir)
    })
}

/// Creates `dir` and proves it accepts files.
fn ensure_writable(dir: &Path) -> Result<(), CliError> {
    let fail = |e: std::io::Error| {
        CliError::new(
            EXIT_OUTPUT,
            format!("output directory {} is not writable: {e}", dir.display()),
        )
    };
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write-probe");
    File::create(&probe).map_err(fail)?;
    fs::remove_file(&probe).map_err(fail)
}

/// Loads a checkpoint and checks every tensor against the config's network.
pub fn load_compatible(path: &Path, setup: &Setup) -> Result<ParamStore, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::new(EXIT_CHECKPOINT, e.to_string()))?;
    let expected = initial_params(setup, 0)?;
    expected.check_compatible(&ckpt.params).map_err(|e| {
        CliError::new(
            EXIT_CHECKPOINT,
            format!("checkpoint {} does not fit the config: {e}", path.display()),
        )
    })?;
    Ok(ckpt.params)
}

fn cmd_train(config: &Path, common: Common) -> Result<(), CliError> {
    let cfg = load_config(config, common.seed)?;
    let out = output_dir(&cfg, common.out);
    ensure_writable(&out)?;
    let updates = cfg.trainer.updates(cfg.scene.trajectory_len);
    println!(
        "training {} (seed {}) for {updates} updates into {}",
        cfg.name,
        cfg.seed,
        out.display()
    );
    let summary = train(&cfg, &out, common.workers, |r| {
        let eval = r
            .eval
            .as_ref()
            .map(|e| format!(" eval {:.4}", e.mean_return))
            .unwrap_or_default();
        println!(
            "update {:>4}/{updates} steps {:>7} return {:.4} ratio {:.4} clip {:.3}{eval}",
            r.update + 1,
            r.env_steps,
            r.mean_return,
            r.metrics.mean_ratio,
            r.metrics.clip_frac
        );
    })?;
    if let Some(e) = summary.last_eval() {
        println!("final deterministic return {:.4}", e.mean_return);
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    config: &Path,
    episodes: Option<usize>,
    common: Common,
) -> Result<(), CliError> {
    let cfg = load_config(config, common.seed)?;
    let setup = cfg.setup();
    let params = load_compatible(checkpoint, &setup)?;
    let out = output_dir(&cfg, common.out);
    ensure_writable(&out)?;
    let episodes = episodes.unwrap_or(cfg.trainer.eval_episodes);
    let report = evaluate_policy(&params, &setup, episodes, &Executor::new(common.workers))?;

    println!("mean return {:.6} over {episodes} episodes", report.mean_return);
    println!("wrong-cube contact rate {:.6}", report.wrong_contact_rate);
    println!("{:<32} {:>8}", "instruction", "success");
    for (ins, rate) in setup.env.instructions.instructions.iter().zip(&report.success_rates) {
        println!("{:<32} {:>8.3}", ins.text, rate);
    }

    let path = out.join("eval.csv");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "episode,instruction,return,success")?;
        for e in 0..report.episodes {
            let ins = &setup.env.instructions.instructions[report.instructions[e]];
            writeln!(w, "{e},{},{},{}", ins.slug(), report.returns[e], report.successes[e] as u8)?;
        }
        w.flush()
    };
    write().map_err(|e| CliError::new(EXIT_OUTPUT, format!("writing {}: {e}", path.display())))
}

fn cmd_render(checkpoint: &Path, config: &Path, common: Common) -> Result<(), CliError> {
    let cfg = load_config(config, common.seed)?;
    let setup = cfg.setup();
    let params = load_compatible(checkpoint, &setup)?;
    let out = common
        .out
        .unwrap_or_else(|| output_dir(&cfg, None).join("frames"));
    ensure_writable(&out)?;
    let frames = render_rollout(&params, &setup, cfg.seed)?;
    for (t, images) in frames.iter().enumerate() {
        for (cam, img) in setup.env.cameras.iter().zip(images) {
            let path = out.join(format!("frame_{t:03}_{}.ppm", cam.pose.name()));
            img.save_ppm(&path).map_err(|e| {
                CliError::new(EXIT_OUTPUT, format!("writing {}: {e}", path.display()))
            })?;
        }
    }
    println!("wrote {} frames per camera to {}", frames.len(), out.display());
    Ok(())
}

/// Observed images, per step and camera, of one deterministic episode. Frame 0
/// is the reset observation; frame `t` is the observation the policy acted on
/// at step `t`.
pub fn render_rollout(
    params: &ParamStore,
    setup: &Setup,
    seed: u64,
) -> Result<Vec<Vec<crate::render::Image>>, TrainError> {
    let env_err = |step, source| TrainError::Env {
        rollout: 0,
        step,
        source,
    };
    let mut env = Env::new(setup.env.clone()).map_err(|e| env_err(0, e))?;
    let mut state = env.reset(seed).map_err(|e| env_err(0, e))?;
    let exec = Executor::sequential();
    let mut frames = Vec::with_capacity(setup.trajectory_len());
    for t in 0..setup.trajectory_len() {
        frames.push(state.frames[0].images.clone());
        let feats = setup.features(std::slice::from_ref(&state), &exec);
        let out = crate::encoders::evaluate(params, &setup.net, &setup.input(&feats)?)?;
        let dist = ActionDistribution {
            mean: out[0].mean_action.clone(),
            std: setup.net.action_std,
        };
        state = env.step(&dist.mean).map_err(|e| env_err(t, e))?.state;
    }
    Ok(frames)
}

fn cmd_gradcheck(config: Option<PathBuf>, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = match config {
        Some(p) => load_config(&p, None)?,
        None => ExperimentConfig::parse(DESK_CONFIG)?,
    };
    let opts = GradcheckOptions {
        seed: seed.unwrap_or(0),
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let report = gradcheck(&cfg.setup(), &opts, None)?;
    println!(
        "{:<28} {:>6} {:>7} {:>12} {:>12}",
        "parameter", "probed", "shrunk", "max_rel_err", "max_|grad|"
    );
    for e in &report.entries {
        println!(
            "{:<28} {:>6} {:>7} {:>12.3e} {:>12.3e}",
            e.name, e.probed, e.shrunk, e.max_rel_err, e.max_abs_grad
        );
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: {} tensors, worst {:.3e} (tolerance {:.0e}), {:.1}s",
        report.entries.len(),
        report.worst().map_or(0.0, |w| w.max_rel_err),
        report.tolerance,
        start.elapsed().as_secs_f64()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::new(EXIT_FAILURE, "gradient check failed"))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train { config, common } => cmd_train(&config, common),
        Command::Eval {
            checkpoint,
            config,
            episodes,
            common,
        } => cmd_eval(&checkpoint, &config, episodes, common),
        Command::RenderRollout {
            checkpoint,
            config,
            common,
        } => cmd_render(&checkpoint, &config, common),
        Command::Gradcheck { config, seed } => cmd_gradcheck(config, seed),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

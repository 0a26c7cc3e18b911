//! The experiment loop: collect, update, evaluate, and write run artifacts
//! (`metrics.csv`, `latest.ckpt`, `final.ckpt`, `learning_curve.svg`).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::encoders::init_params;
use crate::numerics::{Adam, Checkpoint, ParamStore};
use crate::parallel::Executor;
use crate::plot::{learning_curve_svg, Series};
use crate::ppo::{
    collect_rollouts, compute_returns_advantages, derive_seed, evaluate_policy, ppo_update,
    EvalReport, RunningRewardStats, Setup, TrainError, TrajectoryBatch, UpdateMetrics,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CURVE_FILE: &str = "learning_curve.svg";
pub const NAN_DUMP_FILE: &str = "nan_batch.csv";

/// What happened in one update, for callers that watch training live.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub metrics: UpdateMetrics,
    /// Mean of the standardized advantages fed to the update.
    pub advantage_mean: f64,
    pub eval: Option<EvalReport>,
}

pub struct TrainSummary {
    pub records: Vec<UpdateRecord>,
    pub params: ParamStore,
    pub out_dir: PathBuf,
}

impl TrainSummary {
    pub fn last_eval(&self) -> Option<&EvalReport> {
        self.records.iter().rev().find_map(|r| r.eval.as_ref())
    }
}

/// Deterministic initial parameters for a seed.
pub fn initial_params(setup: &Setup, seed: u64) -> Result<ParamStore, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, 0));
    Ok(init_params(&setup.net, &mut rng)?)
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> TrainError {
    let context = context.into();
    move |source| TrainError::Io { context, source }
}

pub fn metrics_header(cfg: &ExperimentConfig) -> String {
    let setup = cfg.setup();
    let mut cols: Vec<String> = [
        "update_idx",
        "env_steps",
        "mean_return",
        "policy_loss",
        "value_loss",
        "clip_frac",
        "mean_ratio",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for ins in &setup.env.instructions.instructions {
        cols.push(format!("success_{}", ins.slug()));
    }
    cols.push("eval_return".into());
    cols.push("wrong_contact_rate".into());
    cols.join(",")
}

fn metrics_row(r: &UpdateRecord, n_instructions: usize) -> String {
    let m = &r.metrics;
    let mut cols = vec![
        r.update.to_string(),
        r.env_steps.to_string(),
        r.mean_return.to_string(),
        m.policy_loss.to_string(),
        m.value_loss.to_string(),
        m.clip_frac.to_string(),
        m.mean_ratio.to_string(),
    ];
    match &r.eval {
        Some(e) => {
            cols.extend(e.success_rates.iter().map(|s| s.to_string()));
            cols.push(e.mean_return.to_string());
            cols.push(e.wrong_contact_rate.to_string());
        }
        None => cols.extend(std::iter::repeat_n(String::new(), n_instructions + 2)),
    }
    cols.join(",")
}

fn dump_batch(path: &Path, batch: &TrajectoryBatch, returns: &[f64], adv: &[f64]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "rollout,step,instruction,action,log_prob_old,value_old,reward,return,advantage")?;
    for k in 0..batch.len() {
        let (r, t) = (k / batch.steps, k % batch.steps);
        let action: Vec<String> = batch.actions[k].iter().map(|a| a.to_string()).collect();
        writeln!(
            w,
            "{r},{t},{},{},{},{},{},{},{}",
            batch.instructions[r],
            action.join(" "),
            batch.log_prob_old[k],
            batch.values_old[k],
            batch.rewards[k],
            returns[k],
            adv[k]
        )?;
    }
    w.flush()
}

/// Runs a full experiment into `out_dir`. `on_update` sees every update as it lands.
pub fn train(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
    mut on_update: impl FnMut(&UpdateRecord),
) -> Result<TrainSummary, TrainError> {
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    let setup = cfg.setup();
    let tc = &cfg.trainer;
    let exec = Executor::new(workers);
    let steps = setup.trajectory_len();
    let updates = tc.updates(steps);
    let n_instr = setup.env.instructions.len();

    let mut params = initial_params(&setup, cfg.seed)?;
    let mut adam = Adam::new(tc.lr);
    let mut stats = RunningRewardStats::default();

    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(
        File::create(&metrics_path).map_err(io_err(format!("creating {}", metrics_path.display())))?,
    );
    writeln!(metrics, "{}", metrics_header(cfg)).map_err(io_err("writing metrics"))?;

    let mut records = Vec::with_capacity(updates);
    for update in 0..updates {
        let seeds: Vec<u64> = (0..tc.rollouts)
            .map(|r| derive_seed(cfg.seed, update as u64, r as u64))
            .collect();
        let batch = collect_rollouts(&params, &setup, &seeds, &mut stats, &exec)?;
        let (returns, advantages) = compute_returns_advantages(&batch, tc.gamma);
        let result = ppo_update(&mut params, &mut adam, &setup, &batch, &returns, &advantages, tc);
        let m = match result {
            Ok(m) => m,
            Err(e @ TrainError::NonFinite { .. }) => {
                let dump = out_dir.join(NAN_DUMP_FILE);
                dump_batch(&dump, &batch, &returns, &advantages)
                    .map_err(io_err(format!("writing {}", dump.display())))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };

        let last = update + 1 == updates;
        let eval = if (update + 1) % tc.eval_every == 0 || last {
            let report = evaluate_policy(&params, &setup, tc.eval_episodes, &exec)?;
            let path = out_dir.join(LATEST_CHECKPOINT);
            Checkpoint::new(&params, Some(&adam))
                .save(&path)
                .map_err(io_err(format!("writing {}", path.display())))?;
            Some(report)
        } else {
            None
        };

        let episode_returns = batch.episode_returns();
        let record = UpdateRecord {
            update,
            env_steps: (update + 1) * batch.len(),
            mean_return: episode_returns.iter().sum::<f64>() / episode_returns.len() as f64,
            metrics: m,
            advantage_mean: advantages.iter().sum::<f64>() / advantages.len() as f64,
            eval,
        };
        writeln!(metrics, "{}", metrics_row(&record, n_instr)).map_err(io_err("writing metrics"))?;
        metrics.flush().map_err(io_err("writing metrics"))?;
        on_update(&record);
        records.push(record);
    }

    let path = out_dir.join(FINAL_CHECKPOINT);
    Checkpoint::new(&params, Some(&adam))
        .save(&path)
        .map_err(io_err(format!("writing {}", path.display())))?;

    let train_curve = Series {
        label: "training episodes",
        color: "steelblue",
        points: records
            .iter()
            .map(|r| (r.env_steps as f64, r.mean_return))
            .collect(),
    };
    let eval_curve = Series {
        label: "deterministic eval",
        color: "darkorange",
        points: records
            .iter()
            .filter_map(|r| r.eval.as_ref().map(|e| (r.env_steps as f64, e.mean_return)))
            .collect(),
    };
    let svg = learning_curve_svg(&cfg.name, &[train_curve, eval_curve]);
    let curve = out_dir.join(CURVE_FILE);
    fs::write(&curve, svg).map_err(io_err(format!("writing {}", curve.display())))?;

    Ok(TrainSummary {
        records,
        params,
        out_dir: out_dir.to_path_buf(),
    })
}

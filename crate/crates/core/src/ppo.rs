//! Clipped-surrogate PPO: lockstep rollout collection, discounted returns
//! without GAE, running reward normalization, full-batch epochs and
//! deterministic evaluation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{
    evaluate, policy_forward, ActionDistribution, AgentInput, EncoderError, NetConfig, SensorMask,
    StateFeatures,
};
use crate::env::{Env, EnvConfig, EnvError, State, StepResult};
use crate::numerics::{Adam, Graph, NumericsError, ParamStore, Tensor};
use crate::parallel::Executor;

pub const REWARD_STD_FLOOR: f64 = 1e-4;
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("trainer config: {0}")]
    Config(String),
    #[error("rollout {rollout}, step {step}: {source}")]
    Env {
        rollout: usize,
        step: usize,
        source: EnvError,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: String, epoch: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub clip_eps: f64,
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub rollouts: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            epochs: 60,
            clip_eps: 0.2,
            gamma: 0.99,
            value_coef: 0.5,
            entropy_coef: 0.0,
            rollouts: 24,
            total_steps: 24 * 32 * 100,
            eval_every: 1,
            eval_episodes: 30,
        }
    }
}

impl TrainerConfig {
    /// Checks ranges; errors name the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(("lr", format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(("clip_eps", format!("clip_eps must lie in (0, 1), got {}", self.clip_eps)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(("gamma", format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        let positive = [
            ("epochs", self.epochs),
            ("rollouts", self.rollouts),
            ("total_steps", self.total_steps),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err((key, format!("{key} must be positive")));
        }
        if !(self.value_coef >= 0.0) {
            return Err(("value_coef", "value_coef must be non-negative".into()));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(("entropy_coef", "entropy_coef must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of updates needed to cover `total_steps`.
    pub fn updates(&self, trajectory_len: usize) -> usize {
        self.total_steps.div_ceil(self.rollouts * trajectory_len)
    }
}

/// Welford accumulator over episodic returns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunningRewardStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningRewardStats {
    pub fn update(&mut self, episode_return: f64) {
        self.count += 1;
        let delta = episode_return - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (episode_return - self.mean);
    }

    /// Sample standard deviation; 1 until two episodes have been seen.
    pub fn std(&self) -> f64 {
        if self.count < 2 {
            1.0
        } else {
            (self.m2.max(0.0) / (self.count - 1) as f64).sqrt()
        }
    }

    /// Divisor applied to environment rewards.
    pub fn scale(&self) -> f64 {
        self.std().max(REWARD_STD_FLOOR)
    }

    /// Normalizes an episode with the current statistics, then absorbs its return.
    pub fn normalize_episode(&mut self, rewards: &[f64]) -> Vec<f64> {
        let scale = self.scale();
        let out = rewards.iter().map(|r| r / scale).collect();
        self.update(rewards.iter().sum());
        out
    }
}

/// Scene, network shapes and the sensor mask: what a policy needs besides weights.
#[derive(Clone, Debug)]
pub struct Setup {
    pub env: Arc<EnvConfig>,
    pub net: NetConfig,
    pub sensors: SensorMask,
}

impl Setup {
    pub fn trajectory_len(&self) -> usize {
        self.env.trajectory_len
    }

    pub fn features(&self, states: &[State], exec: &Executor) -> Vec<StateFeatures> {
        exec.map(states.len(), |i| StateFeatures::from_state(&states[i], self.sensors))
    }

    pub fn input(&self, feats: &[StateFeatures]) -> Result<AgentInput, TrainError> {
        Ok(AgentInput::from_features(
            &self.net,
            &feats.iter().collect::<Vec<_>>(),
        )?)
    }
}

/// Derives a stream seed from a base seed and two indices.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

/// Records from `R` episodes of `T` steps, flattened rollout-major
/// (index `r * T + t`).
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub rollouts: usize,
    pub steps: usize,
    pub instructions: Vec<usize>,
    pub features: Vec<StateFeatures>,
    pub actions: Vec<Vec<f64>>,
    pub log_prob_old: Vec<f64>,
    pub values_old: Vec<f64>,
    /// Environment rewards (already divided by `T`).
    pub env_rewards: Vec<f64>,
    /// Environment rewards after running-std normalization.
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub target_touched: Vec<bool>,
    pub wrong_contact: Vec<bool>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rollouts * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of environment rewards per episode.
    pub fn episode_returns(&self) -> Vec<f64> {
        self.env_rewards
            .chunks(self.steps)
            .map(|c| c.iter().sum())
            .collect()
    }
}

type Lockstep = (Vec<Vec<State>>, Vec<Vec<StepResult>>);

/// Runs every env for `T` steps in lockstep. `policy` maps the current states
/// to one action per env. Returns the visited states and step results, both
/// indexed `[env][t]`.
fn lockstep<F>(
    exec: &Executor,
    envs: &mut [Env],
    initial: Vec<State>,
    steps: usize,
    mut policy: F,
) -> Result<Lockstep, TrainError>
where
    F: FnMut(&[State]) -> Result<Vec<Vec<f64>>, TrainError>,
{
    let n = envs.len();
    let mut visited: Vec<Vec<State>> = (0..n).map(|_| Vec::with_capacity(steps)).collect();
    let mut results: Vec<Vec<StepResult>> = (0..n).map(|_| Vec::with_capacity(steps)).collect();
    let mut current = initial;
    for t in 0..steps {
        let actions = policy(&current)?;
        let stepped = exec.map_mut(envs, |i, env| env.step(&actions[i]));
        let mut next = Vec::with_capacity(n);
        for (i, (r, s)) in stepped.into_iter().zip(current).enumerate() {
            let r = r.map_err(|source| TrainError::Env {
                rollout: i,
                step: t,
                source,
            })?;
            next.push(r.state.clone());
            visited[i].push(s);
            results[i].push(r);
        }
        current = next;
    }
    Ok((visited, results))
}

fn make_envs(setup: &Setup, n: usize) -> Result<Vec<Env>, TrainError> {
    (0..n)
        .map(|i| {
            Env::new(setup.env.clone()).map_err(|source| TrainError::Env {
                rollout: i,
                step: 0,
                source,
            })
        })
        .collect()
}

fn reset_all(
    exec: &Executor,
    envs: &mut [Env],
    reset: impl Fn(usize, &mut Env) -> Result<State, EnvError> + Sync + Send,
) -> Result<Vec<State>, TrainError> {
    exec.map_mut(envs, reset)
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|source| TrainError::Env {
                rollout: i,
                step: 0,
                source,
            })
        })
        .collect()
}

/// Collects one episode per seed under a frozen parameter snapshot, sampling
/// actions from the Gaussian policy. Rewards are normalized episode by episode
/// in seed order, so the result does not depend on the worker count.
pub fn collect_rollouts(
    params: &ParamStore,
    setup: &Setup,
    seeds: &[u64],
    stats: &mut RunningRewardStats,
    exec: &Executor,
) -> Result<TrajectoryBatch, TrainError> {
    let r_count = seeds.len();
    let steps = setup.trajectory_len();
    let mut envs = make_envs(setup, r_count)?;
    let initial = reset_all(exec, &mut envs, |i, env| env.reset(seeds[i]))?;
    let instructions = envs.iter().map(Env::instruction_index).collect();
    let mut rngs: Vec<ChaCha8Rng> = seeds
        .iter()
        .map(|s| ChaCha8Rng::seed_from_u64(derive_seed(*s, 1, 0)))
        .collect();

    // (features, actions, log-probs, values) for every env at one step
    type StepRecord = (Vec<StateFeatures>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>);
    let mut per_step: Vec<StepRecord> = Vec::with_capacity(steps);
    let (_, results) = lockstep(exec, &mut envs, initial, steps, |states| {
        let feats = setup.features(states, exec);
        let outs = evaluate(params, &setup.net, &setup.input(&feats)?)?;
        let mut actions = Vec::with_capacity(states.len());
        let mut log_probs = Vec::with_capacity(states.len());
        for (o, rng) in outs.iter().zip(rngs.iter_mut()) {
            let dist = ActionDistribution {
                mean: o.mean_action.clone(),
                std: setup.net.action_std,
            };
            let a = dist.sample(rng);
            log_probs.push(dist.log_prob(&a));
            actions.push(a);
        }
        let values = outs.iter().map(|o| o.value).collect();
        per_step.push((feats, actions.clone(), log_probs, values));
        Ok(actions)
    })?;

    let n = r_count * steps;
    let mut features = vec![None; n];
    let mut actions = vec![Vec::new(); n];
    let mut log_prob_old = vec![0.0; n];
    let mut values_old = vec![0.0; n];
    for (t, (feats, acts, lps, vals)) in per_step.into_iter().enumerate() {
        for (r, ((f, a), (lp, v))) in feats.into_iter().zip(acts).zip(lps.into_iter().zip(vals)).enumerate() {
            let k = r * steps + t;
            features[k] = Some(f);
            actions[k] = a;
            log_prob_old[k] = lp;
            values_old[k] = v;
        }
    }

    let mut env_rewards = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut dones = Vec::with_capacity(n);
    let mut target_touched = Vec::with_capacity(n);
    let mut wrong_contact = Vec::with_capacity(n);
    for episode in &results {
        let raw: Vec<f64> = episode.iter().map(|s| s.reward).collect();
        rewards.extend(stats.normalize_episode(&raw));
        env_rewards.extend(raw);
        dones.extend(episode.iter().map(|s| s.done));
        target_touched.extend(episode.iter().map(|s| s.info.target_touched));
        wrong_contact.extend(episode.iter().map(|s| s.info.wrong_contact));
    }

    Ok(TrajectoryBatch {
        rollouts: r_count,
        steps,
        instructions,
        features: features.into_iter().map(|f| f.expect("every slot filled")).collect(),
        actions,
        log_prob_old,
        values_old,
        env_rewards,
        rewards,
        dones,
        target_touched,
        wrong_contact,
    })
}

/// Discounted reward-to-go within each episode.
pub fn discounted_returns(rewards: &[f64], steps: usize, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    for (ep_r, ep_out) in rewards.chunks(steps).zip(out.chunks_mut(steps)) {
        let mut acc = 0.0;
        for t in (0..ep_r.len()).rev() {
            acc = ep_r[t] + gamma * acc;
            ep_out[t] = acc;
        }
    }
    out
}

/// Shifts and scales to zero mean and unit (population) std, with a std floor.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(ADVANTAGE_STD_FLOOR);
    xs.iter().map(|x| (x - mean) / std).collect()
}

/// Returns `R_t` and standardized advantages `R_t − V_old(s_t)`.
pub fn compute_returns_advantages(batch: &TrajectoryBatch, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let returns = discounted_returns(&batch.rewards, batch.steps, gamma);
    let raw: Vec<f64> = returns
        .iter()
        .zip(&batch.values_old)
        .map(|(r, v)| r - v)
        .collect();
    (returns, standardize(&raw))
}

/// Per-update training diagnostics; losses, ratio and clip fraction are
/// averaged over epochs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_ratio: f64,
    pub clip_frac: f64,
    /// `max |ρ − 1|` in the first epoch, before any parameter change.
    pub first_epoch_ratio_dev: f64,
    /// Largest `min(ρÂ, clip(ρ)Â) − ρÂ` seen; never positive.
    pub max_surrogate_excess: f64,
}

/// Loss pieces of one forward pass, kept for reporting.
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub ratios: Vec<f64>,
    pub surrogate_excess: f64,
}

/// Builds the clipped PPO loss on `g` and returns its handle with diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss(
    g: &mut Graph,
    setup: &Setup,
    input: &AgentInput,
    actions: &Tensor,
    log_prob_old: &[f64],
    returns: &[f64],
    advantages: &[f64],
    cfg: &TrainerConfig,
) -> Result<(crate::numerics::Var, LossParts), TrainError> {
    let n = input.len();
    let vars = policy_forward(g, &setup.net, input)?;
    let lp = g.gaussian_log_prob(vars.mean, actions, setup.net.action_std)?;
    let old = g.constant(Tensor::new(vec![n], log_prob_old.to_vec())?);
    let diff = g.sub(lp, old)?;
    let ratio = g.exp(diff);
    let adv = g.constant(Tensor::new(vec![n], advantages.to_vec())?);
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let clipped = g.mul(clipped_ratio, adv)?;
    let surrogate = g.minimum(unclipped, clipped)?;
    let mean_surrogate = g.mean(surrogate);
    let policy = g.scale(mean_surrogate, -1.0);

    let value = g.reshape(vars.value, &[n])?;
    let target = g.constant(Tensor::new(vec![n], returns.to_vec())?);
    let err = g.sub(value, target)?;
    let sq = g.square(err);
    let value_loss = g.mean(sq);
    let weighted = g.scale(value_loss, cfg.value_coef);
    // The action std is fixed, so an entropy bonus would be a constant and is omitted.
    let total = g.add(policy, weighted)?;

    let surrogate_excess = g
        .value(surrogate)
        .data()
        .iter()
        .zip(g.value(unclipped).data())
        .map(|(s, u)| s - u)
        .fold(f64::NEG_INFINITY, f64::max);
    let parts = LossParts {
        total: g.value(total).item()?,
        policy: g.value(policy).item()?,
        value: g.value(value_loss).item()?,
        ratios: g.value(ratio).data().to_vec(),
        surrogate_excess,
    };
    Ok((total, parts))
}

/// `epochs` full-batch Adam steps on the clipped surrogate plus value loss.
pub fn ppo_update(
    params: &mut ParamStore,
    optimizer: &mut Adam,
    setup: &Setup,
    batch: &TrajectoryBatch,
    returns: &[f64],
    advantages: &[f64],
    cfg: &TrainerConfig,
) -> Result<UpdateMetrics, TrainError> {
    let n = batch.len();
    let input = setup.input(&batch.features)?;
    let dof = setup.net.dof;
    let actions = Tensor::new(vec![n, dof], batch.actions.concat())?;
    let mut m = UpdateMetrics {
        max_surrogate_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for epoch in 0..cfg.epochs {
        let grads = {
            let mut g = Graph::new(params);
            let (loss, parts) = ppo_loss(
                &mut g,
                setup,
                &input,
                &actions,
                &batch.log_prob_old,
                returns,
                advantages,
                cfg,
            )?;
            if !parts.total.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss".into(),
                    epoch,
                });
            }
            if epoch == 0 {
                m.first_epoch_ratio_dev = parts
                    .ratios
                    .iter()
                    .map(|r| (r - 1.0).abs())
                    .fold(0.0, f64::max);
            }
            m.policy_loss += parts.policy;
            m.value_loss += parts.value;
            m.mean_ratio += parts.ratios.iter().sum::<f64>() / n as f64;
            m.clip_frac += parts
                .ratios
                .iter()
                .filter(|r| (**r - 1.0).abs() > cfg.clip_eps)
                .count() as f64
                / n as f64;
            m.max_surrogate_excess = m.max_surrogate_excess.max(parts.surrogate_excess);
            g.backward(loss)?
        };
        if let Some(name) = grads.first_non_finite() {
            return Err(TrainError::NonFinite {
                what: format!("gradient of `{name}`"),
                epoch,
            });
        }
        optimizer.step(params, &grads)?;
        if let Some((name, _)) = params.iter().find(|(_, t)| !t.all_finite()) {
            return Err(TrainError::NonFinite {
                what: format!("parameter `{name}` after the step"),
                epoch,
            });
        }
    }
    let e = cfg.epochs as f64;
    m.policy_loss /= e;
    m.value_loss /= e;
    m.mean_ratio /= e;
    m.clip_frac /= e;
    Ok(m)
}

/// Outcome of a batch of evaluation episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub returns: Vec<f64>,
    /// Instruction index of each episode.
    pub instructions: Vec<usize>,
    /// Whether the target was touched at least once, per episode.
    pub successes: Vec<bool>,
    /// Per instruction: success fraction over its episodes (0 if it had none).
    pub success_rates: Vec<f64>,
    /// Fraction of steps with at least one fingertip on a non-target cube.
    pub wrong_contact_rate: f64,
}

fn report(
    n_instructions: usize,
    instructions: Vec<usize>,
    results: &[Vec<StepResult>],
) -> EvalReport {
    let returns: Vec<f64> = results
        .iter()
        .map(|ep| ep.iter().map(|s| s.reward).sum())
        .collect();
    let successes: Vec<bool> = results
        .iter()
        .map(|ep| ep.iter().any(|s| s.info.target_touched))
        .collect();
    let mut hits = vec![0usize; n_instructions];
    let mut counts = vec![0usize; n_instructions];
    for (i, ok) in instructions.iter().zip(&successes) {
        counts[*i] += 1;
        hits[*i] += *ok as usize;
    }
    let steps: usize = results.iter().map(Vec::len).sum();
    let wrong = results
        .iter()
        .flatten()
        .filter(|s| s.info.wrong_contact)
        .count();
    EvalReport {
        episodes: results.len(),
        mean_return: returns.iter().sum::<f64>() / results.len().max(1) as f64,
        returns,
        instructions,
        successes,
        success_rates: hits
            .iter()
            .zip(&counts)
            .map(|(h, c)| if *c == 0 { 0.0 } else { *h as f64 / *c as f64 })
            .collect(),
        wrong_contact_rate: wrong as f64 / steps.max(1) as f64,
    }
}

/// Deterministic evaluation: actions are the policy mean. Episode `e` runs
/// instruction `e mod n_instructions`, so every instruction gets an equal share.
pub fn evaluate_policy(
    params: &ParamStore,
    setup: &Setup,
    episodes: usize,
    exec: &Executor,
) -> Result<EvalReport, TrainError> {
    let n_instr = setup.env.instructions.len();
    let mut envs = make_envs(setup, episodes)?;
    let initial = reset_all(exec, &mut envs, |i, env| env.reset_to(i % n_instr))?;
    let instructions = (0..episodes).map(|e| e % n_instr).collect();
    let (_, results) = lockstep(exec, &mut envs, initial, setup.trajectory_len(), |states| {
        let feats = setup.features(states, exec);
        let outs = evaluate(params, &setup.net, &setup.input(&feats)?)?;
        Ok(outs.into_iter().map(|o| o.mean_action).collect())
    })?;
    Ok(report(n_instr, instructions, &results))
}

/// Same protocol as [`evaluate_policy`] with joint targets drawn uniformly
/// within the joint limits at every step.
pub fn random_policy_baseline(
    setup: &Setup,
    episodes: usize,
    seed: u64,
    exec: &Executor,
) -> Result<EvalReport, TrainError> {
    let n_instr = setup.env.instructions.len();
    let lo = setup.env.robot.limits_min();
    let hi = setup.env.robot.limits_max();
    let mut envs = make_envs(setup, episodes)?;
    let initial = reset_all(exec, &mut envs, |i, env| env.reset_to(i % n_instr))?;
    let instructions = (0..episodes).map(|e| e % n_instr).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, results) = lockstep(exec, &mut envs, initial, setup.trajectory_len(), |states| {
        Ok(states
            .iter()
            .map(|_| lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..=*b)).collect())
            .collect())
    })?;
    Ok(report(n_instr, instructions, &results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns(&[0.0, 0.0, 1.0], 3, 1.0), vec![1.0, 1.0, 1.0]);
        assert_eq!(discounted_returns(&[1.0, 0.0, 0.0], 3, 0.5), vec![1.0, 0.0, 0.0]);
        // episodes do not leak into each other
        assert_eq!(
            discounted_returns(&[0.0, 1.0, 1.0, 0.0], 2, 1.0),
            vec![1.0, 1.0, 1.0, 0.0]
        );
    }

    #[test]
    fn constant_input_standardizes_to_zero() {
        assert!(standardize(&[3.0; 5]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [0.5, 1.5, -2.0, 4.0, 0.25];
        let mut s = RunningRewardStats::default();
        for x in xs {
            s.update(x);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((s.std() - var.sqrt()).abs() < 1e-12);
        assert!((s.mean - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_stay_zero() {
        let mut s = RunningRewardStats::default();
        for _ in 0..5 {
            let out = s.normalize_episode(&[0.0; 4]);
            assert!(out.iter().all(|v| *v == 0.0));
        }
        assert_eq!(s.scale(), REWARD_STD_FLOOR);
    }

    #[test]
    fn fewer_than_two_episodes_use_unit_scale() {
        let mut s = RunningRewardStats::default();
        assert_eq!(s.normalize_episode(&[0.5, 0.25]), vec![0.5, 0.25]);
        assert_eq!(s.scale(), 1.0);
    }

    #[test]
    fn seeds_are_distinct() {
        let a = derive_seed(7, 0, 0);
        assert_ne!(a, derive_seed(7, 0, 1));
        assert_ne!(a, derive_seed(7, 1, 0));
        assert_ne!(a, derive_seed(8, 0, 0));
        assert_eq!(a, derive_seed(7, 0, 0));
    }

    #[test]
    fn config_checks() {
        let mut c = TrainerConfig::default();
        assert!(c.validate().is_ok());
        c.clip_eps = 1.0;
        assert!(c.validate().is_err());
        c.clip_eps = 0.2;
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(TrainerConfig::default().updates(32), 100);
    }
}

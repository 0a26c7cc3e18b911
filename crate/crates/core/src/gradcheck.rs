//! Central finite-difference check of the full PPO loss against the tape's
//! analytic gradients, tensor by tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{evaluate, StateFeatures};
use crate::numerics::graph::Fault;
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::ppo::{ppo_loss, Setup, TrainError, TrainerConfig};
use crate::train::initial_params;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub batch: usize,
    /// Entries probed per tensor (all of them if the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Starting step. A probe whose `θ ± step` crosses a max-pool or clamp
    /// boundary retries with a ten times smaller step, down to `min_step`.
    pub step: f64,
    pub min_step: f64,
    pub tolerance: f64,
    /// Gradients below this magnitude are compared on an absolute scale.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            batch: 3,
            samples_per_tensor: 6,
            step: 1e-4,
            min_step: 1e-7,
            tolerance: 1e-4,
            magnitude_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
    /// Analytic and numeric values at the probe with the largest error.
    pub worst_pair: (f64, f64),
    /// Probes that had to shrink the step to stay on one smooth piece.
    pub shrunk: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Problem {
    setup: Setup,
    input: crate::encoders::AgentInput,
    actions: Tensor,
    log_prob_old: Vec<f64>,
    returns: Vec<f64>,
    advantages: Vec<f64>,
    trainer: TrainerConfig,
}

impl Problem {
    fn new(setup: &Setup, params: &ParamStore, opts: &GradcheckOptions) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let net = &setup.net;
        let instr = &setup.env.instructions.instructions;
        let feats: Vec<StateFeatures> = (0..opts.batch)
            .map(|i| StateFeatures {
                tokens: instr[i % instr.len()].tokens.clone(),
                image: (0..net.image_channels() * net.image_height * net.image_width)
                    .map(|_| rng.random::<f64>())
                    .collect(),
                proprio_tactile: (0..net.pt_input()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let input = setup.input(&feats)?;
        let outs = evaluate(params, net, &input)?;
        let mut actions = Vec::new();
        let mut log_prob_old = Vec::new();
        for o in &outs {
            let a: Vec<f64> = o
                .mean_action
                .iter()
                .map(|m| m + rng.random_range(-0.3..0.3))
                .collect();
            let lp = crate::numerics::ops::gaussian_log_prob(&o.mean_action, &a, net.action_std);
            // Ratios land in roughly [0.9, 1.1], inside the clip range.
            log_prob_old.push(lp + rng.random_range(-0.1..0.1));
            actions.extend(a);
        }
        let n = opts.batch;
        Ok(Self {
            setup: setup.clone(),
            input,
            actions: Tensor::new(vec![n, net.dof], actions)?,
            log_prob_old,
            returns: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            advantages: (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
            trainer: TrainerConfig::default(),
        })
    }

    fn loss(&self, params: &ParamStore) -> Result<(f64, Vec<usize>), TrainError> {
        let mut g = Graph::new(params);
        let (_, parts) = self.build(&mut g)?;
        Ok((parts.total, g.branch_signature()))
    }

    fn build(&self, g: &mut Graph) -> Result<(crate::numerics::Var, crate::ppo::LossParts), TrainError> {
        ppo_loss(
            g,
            &self.setup,
            &self.input,
            &self.actions,
            &self.log_prob_old,
            &self.returns,
            &self.advantages,
            &self.trainer,
        )
    }
}

/// Checks every parameter tensor of a freshly initialised network.
pub fn gradcheck(
    setup: &Setup,
    opts: &GradcheckOptions,
    fault: Option<Fault>,
) -> Result<GradcheckReport, TrainError> {
    let mut params = initial_params(setup, opts.seed)?;
    let problem = Problem::new(setup, &params, opts)?;
    let (grads, base) = {
        let mut g = Graph::new(&params);
        if let Some(f) = fault {
            g.inject_fault(f);
        }
        let (loss, _) = problem.build(&mut g)?;
        (g.backward(loss)?, g.branch_signature())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let len = params.get(&name).map_or(0, Tensor::len);
        let analytic = grads.get(&name).expect("one gradient per parameter").clone();
        let idx: Vec<usize> = if len <= opts.samples_per_tensor {
            (0..len).collect()
        } else {
            (0..opts.samples_per_tensor)
                .map(|_| rng.random_range(0..len))
                .collect()
        };
        let mut check = ParamCheck {
            name: name.clone(),
            probed: idx.len(),
            max_rel_err: 0.0,
            max_abs_grad: 0.0,
            worst_pair: (0.0, 0.0),
            shrunk: 0,
        };
        for i in idx {
            let original = params.get(&name).expect("exists").data()[i];
            let mut h = opts.step;
            let numeric = loop {
                params.get_mut(&name).expect("exists").data_mut()[i] = original + h;
                let (plus, sig_plus) = problem.loss(&params)?;
                params.get_mut(&name).expect("exists").data_mut()[i] = original - h;
                let (minus, sig_minus) = problem.loss(&params)?;
                params.get_mut(&name).expect("exists").data_mut()[i] = original;
                let smooth = sig_plus == base && sig_minus == base;
                if smooth || h / 10.0 < opts.min_step {
                    break (plus - minus) / (2.0 * h);
                }
                h /= 10.0;
            };
            if h < opts.step {
                check.shrunk += 1;
            }
            let a = analytic.data()[i];
            let err = relative_error(a, numeric, opts.magnitude_floor);
            if err >= check.max_rel_err {
                check.max_rel_err = err;
                check.worst_pair = (a, numeric);
            }
            check.max_abs_grad = check.max_abs_grad.max(a.abs());
        }
        entries.push(check);
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor_for_tiny_values() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
    }
}

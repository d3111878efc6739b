use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{rl_loss, LossBreakdown, LossCoefs, Mix, Rollout, RolloutBatch, Weighting};
use super::{check, TrainError};
use crate::dsl::PLAN_LEN;
use crate::env::Environment;
use crate::policy::{apply_update, sample_completion, AdamConfig, AdamState, Decoding, PolicyParams};
use crate::rng::{self, tag};
use crate::sensitivity::{estimate_sensitivity, token_weights, SensitivityConfig};
use crate::task::{encode_prompt, Task, PROMPT_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub clip_eps: f64,
    pub ent_coef: f64,
    pub kl_coef: f64,
    pub k1: f64,
    pub k2: f64,
    /// Rollouts per step, one per distinct task.
    pub batch_size: usize,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    /// Optimizer steps between reference refreshes.
    pub ref_interval: u64,
    pub total_steps: usize,
    pub temperature: f64,
    pub lr: f64,
    pub max_grad_norm: Option<f64>,
    /// `off` trains plain PPO without sensitivity weights.
    pub weighting: Weighting,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            clip_eps: 0.2,
            ent_coef: 0.01,
            kl_coef: 0.05,
            k1: 0.5,
            k2: 1.0,
            batch_size: 64,
            ppo_epochs: 4,
            minibatch_size: 16,
            ref_interval: 50,
            total_steps: 300,
            temperature: 1.0,
            lr: 3e-4,
            max_grad_norm: None,
            weighting: Weighting::Sensitivity,
        }
    }
}

impl RlConfig {
    pub fn coefs(&self) -> LossCoefs {
        LossCoefs {
            clip_eps: self.clip_eps,
            beta_ent: self.ent_coef,
            beta_kl: self.kl_coef,
            k1: self.k1,
            k2: self.k2,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, max_grad_norm: self.max_grad_norm, ..Default::default() }
    }

    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        check(&mut errs, self.clip_eps > 0.0 && self.clip_eps < 1.0, "clip_eps", "must lie in (0, 1)");
        for (name, v) in [("ent_coef", self.ent_coef), ("kl_coef", self.kl_coef), ("k1", self.k1), ("k2", self.k2)] {
            check(&mut errs, v >= 0.0 && v.is_finite(), name, "must be finite and non-negative");
        }
        check(&mut errs, self.batch_size >= 1, "batch_size", "must be at least 1");
        check(&mut errs, self.minibatch_size >= 1, "minibatch_size", "must be at least 1");
        check(&mut errs, self.ref_interval >= 1, "ref_interval", "must be at least 1");
        check(&mut errs, self.temperature > 0.0, "temperature", "must be positive");
        check(&mut errs, self.lr >= 0.0 && self.lr.is_finite(), "lr", "must be finite and non-negative");
        errs.extend(self.adam().validate());
        errs
    }
}

/// Action model, its frozen reference snapshot and optimizer state.
#[derive(Clone, Debug)]
pub struct RlState {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub adam: AdamState,
    pub opt_steps: u64,
    /// Completed RL steps.
    pub step: u64,
}

impl RlState {
    pub fn new(params: PolicyParams) -> Self {
        let reference = params.clone_params();
        let adam = AdamState::new(&params);
        RlState { params, reference, adam, opt_steps: 0, step: 0 }
    }
}

pub const METRICS_HEADER: &str = "step,policy_loss,value_loss,reg_loss,total_loss,mean_reward,completion_rate,ref_version";
pub const DIAGNOSTICS_HEADER: &str = "step,kl_ref,kl_old,entropy,clip_frac,parse_rate,mean_weight";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    /// Loss components averaged over the step's optimizer updates.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    pub mean_reward: f64,
    pub completion_rate: f64,
    pub ref_version: u64,
    pub kl_ref: f64,
    pub kl_old: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub parse_rate: f64,
    pub mean_weight: f64,
    /// Total loss of every optimizer update, in order.
    #[serde(skip)]
    pub update_totals: Vec<f64>,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.policy_loss,
            self.value_loss,
            self.reg_loss,
            self.total_loss,
            self.mean_reward,
            self.completion_rate,
            self.ref_version
        )
    }

    pub fn diagnostics_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.kl_ref, self.kl_old, self.entropy, self.clip_frac, self.parse_rate, self.mean_weight
        )
    }
}

/// One sampled completion per task, scored and annotated with values,
/// advantages and token weights. Randomness is keyed by `(seed, step, i)`.
pub fn collect_rollouts(
    params: &PolicyParams,
    env: &Environment,
    tasks: &[&Task],
    cfg: &RlConfig,
    sens: &SensitivityConfig,
    seed: u64,
    step: u64,
) -> Result<RolloutBatch, TrainError> {
    let samples = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| -> Result<Rollout, TrainError> {
            let prompt = encode_prompt(task)?;
            let mut r = rng::stream(seed, &[tag::ROLLOUT, step, i as u64]);
            let c = sample_completion(params, &prompt, Decoding::Sample { temperature: cfg.temperature }, PLAN_LEN, &mut r)?;
            let rv = env.reward(task, &c.tokens);
            let mut states = prompt.to_vec();
            states.extend_from_slice(&c.tokens[..c.tokens.len() - 1]);
            let out = params.forward(&states)?;
            let values = out.values[PROMPT_LEN - 1..].to_vec();
            let advantages = values.iter().map(|v| rv.value - v).collect();
            let weights = if cfg.weighting == Weighting::Sensitivity && i % sens.stride == 0 {
                let s = estimate_sensitivity(env, task, &c.tokens, rv.value, sens, seed, &[step, i as u64]);
                token_weights(&s, sens)
            } else {
                vec![1.0; c.tokens.len()]
            };
            Ok(Rollout {
                task_id: task.id,
                prompt,
                completion: c.tokens,
                old_logprobs: c.logprobs,
                reward: rv.value,
                branch: rv.branch,
                values,
                advantages,
                weights,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(RolloutBatch { samples })
}

/// Collect rollouts on a fresh random subset of `tasks`, then run the PPO
/// epochs. The reference snapshot is refreshed after every `ref_interval`-th
/// optimizer step.
pub fn rl_step(
    state: &mut RlState,
    env: &Environment,
    tasks: &[Task],
    cfg: &RlConfig,
    sens: &SensitivityConfig,
    seed: u64,
) -> Result<StepMetrics, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    let step = state.step;
    let mut pick = rng::stream(seed, &[tag::SHUFFLE, tag::ROLLOUT, step]);
    let chosen: Vec<&Task> = if cfg.batch_size <= tasks.len() {
        index::sample(&mut pick, tasks.len(), cfg.batch_size).into_iter().map(|i| &tasks[i]).collect()
    } else {
        (0..cfg.batch_size).map(|i| &tasks[i % tasks.len()]).collect()
    };
    let batch = collect_rollouts(&state.params, env, &chosen, cfg, sens, seed, step)?;

    let coefs = cfg.coefs();
    let adam_cfg = cfg.adam();
    let mut sum = LossBreakdown::default();
    let mut totals = Vec::new();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for epoch in 0..cfg.ppo_epochs {
        order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, step, epoch as u64]));
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb: Vec<&Rollout> = chunk.iter().map(|&i| &batch.samples[i]).collect();
            let (lb, grad) = rl_loss(&state.params, &state.reference, &mb, &coefs, Mix::total(&coefs), cfg.weighting, true)?;
            apply_update(&mut state.params, &grad.expect("gradient requested"), &mut state.adam, &adam_cfg)?;
            state.opt_steps += 1;
            if state.opt_steps % cfg.ref_interval == 0 {
                state.reference = state.params.clone_params();
            }
            totals.push(lb.total);
            sum.policy += lb.policy;
            sum.value += lb.value;
            sum.reg += lb.reg;
            sum.total += lb.total;
            sum.entropy += lb.entropy;
            sum.kl_ref += lb.kl_ref;
            sum.kl_old += lb.kl_old;
            sum.clip_frac += lb.clip_frac;
        }
    }
    state.step += 1;
    let n = totals.len().max(1) as f64;
    let n_tok: usize = batch.samples.iter().map(|s| s.weights.len()).sum();
    let w_sum: f64 = batch.samples.iter().flat_map(|s| &s.weights).sum();
    Ok(StepMetrics {
        step: state.step,
        policy_loss: sum.policy / n,
        value_loss: sum.value / n,
        reg_loss: sum.reg / n,
        total_loss: sum.total / n,
        mean_reward: batch.mean_reward(),
        completion_rate: batch.completion_rate(),
        ref_version: state.reference.version(),
        kl_ref: sum.kl_ref / n,
        kl_old: sum.kl_old / n,
        entropy: sum.entropy / n,
        clip_frac: sum.clip_frac / n,
        parse_rate: batch.parse_rate(),
        mean_weight: w_sum / n_tok.max(1) as f64,
        update_totals: totals,
    })
}

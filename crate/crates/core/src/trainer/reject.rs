use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::SftPair;
use super::pretrain::sft_step;
use super::{check, TrainError};
use crate::dsl::{Token, PLAN_LEN};
use crate::env::Environment;
use crate::eval::{evaluate, EvalSet, GreedyPolicy};
use crate::policy::{sample_completion, AdamConfig, AdamState, Decoding, PolicyParams};
use crate::reward::Branch;
use crate::rng::{self, tag};
use crate::task::{encode_prompt, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejectSamplingConfig {
    /// Completions sampled per task.
    pub group_size: usize,
    pub temperature: f64,
    pub max_rounds: usize,
    /// Stop once a round improves the held-out success rate by less than this.
    pub min_improvement: f64,
    pub sft_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Held-out feasible tasks used for the success rate.
    pub n_holdout: usize,
    pub holdout_first_id: u64,
}

impl Default for RejectSamplingConfig {
    fn default() -> Self {
        RejectSamplingConfig {
            group_size: 8,
            temperature: 1.0,
            max_rounds: 4,
            min_improvement: 0.01,
            sft_epochs: 8,
            batch_size: 32,
            lr: 1e-3,
            n_holdout: 200,
            holdout_first_id: 500_000,
        }
    }
}

impl RejectSamplingConfig {
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        check(&mut errs, self.group_size >= 1, "group_size", "must be at least 1");
        check(&mut errs, self.temperature > 0.0, "temperature", "must be positive");
        check(&mut errs, self.batch_size >= 1, "batch_size", "must be at least 1");
        check(&mut errs, self.lr >= 0.0 && self.lr.is_finite(), "lr", "must be finite and non-negative");
        check(&mut errs, self.n_holdout >= 1, "n_holdout", "must be at least 1");
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetainedPair {
    pub prompt: [Token; crate::task::PROMPT_LEN],
    pub completion: Vec<Token>,
    pub reward: f64,
}

/// Best satisfying completion per task id, accumulated over rounds.
pub type Retained = BTreeMap<u64, RetainedPair>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Tasks whose retained pair was added or improved this round.
    pub n_new: usize,
    pub n_retained: usize,
    pub success_rate: f64,
    pub mean_loss: Option<f64>,
}

fn success_rate(params: &PolicyParams, holdout: &EvalSet, env: &Environment) -> Result<f64, TrainError> {
    let policy = GreedyPolicy { name: String::new(), params };
    Ok(evaluate(&policy, holdout, env)?.completion_rate)
}

/// One round: sample, keep the best satisfying completion per task, fine-tune
/// on everything retained so far, and measure held-out success.
#[allow(clippy::too_many_arguments)]
pub fn reject_sampling_round(
    params: &mut PolicyParams,
    env: &Environment,
    tasks: &[Task],
    holdout: &EvalSet,
    cfg: &RejectSamplingConfig,
    seed: u64,
    round: usize,
    retained: &mut Retained,
    prev_rate: f64,
) -> Result<RoundReport, TrainError> {
    let snapshot = &*params;
    let best: Vec<Option<(u64, RetainedPair)>> = tasks
        .par_iter()
        .map(|task| -> Result<_, TrainError> {
            let prompt = encode_prompt(task)?;
            let mut best: Option<RetainedPair> = None;
            for g in 0..cfg.group_size {
                let mut r = rng::stream(seed, &[tag::REJECT, round as u64, task.id, g as u64]);
                let c = sample_completion(snapshot, &prompt, Decoding::Sample { temperature: cfg.temperature }, PLAN_LEN, &mut r)?;
                let rv = env.reward(task, &c.tokens);
                if rv.branch == Branch::Satisfied && best.as_ref().is_none_or(|b| rv.value > b.reward) {
                    best = Some(RetainedPair { prompt, completion: c.tokens, reward: rv.value });
                }
            }
            Ok(best.map(|b| (task.id, b)))
        })
        .collect::<Result<_, _>>()?;

    let mut n_new = 0;
    for (id, pair) in best.into_iter().flatten() {
        let better = retained.get(&id).is_none_or(|old| pair.reward > old.reward);
        if better {
            retained.insert(id, pair);
            n_new += 1;
        }
    }
    if retained.is_empty() {
        return Ok(RoundReport { round, n_new, n_retained: 0, success_rate: prev_rate, mean_loss: None });
    }

    let pairs: Vec<SftPair> = retained.values().map(|p| (p.prompt, p.completion.clone())).collect();
    let adam_cfg = AdamConfig { lr: cfg.lr, ..Default::default() };
    let mut adam = AdamState::new(params);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut loss_sum = 0.0;
    let mut n_steps = 0;
    for epoch in 0..cfg.sft_epochs {
        order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, tag::REJECT, round as u64, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let mb: Vec<&SftPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            loss_sum += sft_step(params, &mut adam, &adam_cfg, &mb)?;
            n_steps += 1;
        }
    }
    Ok(RoundReport {
        round,
        n_new,
        n_retained: retained.len(),
        success_rate: success_rate(params, holdout, env)?,
        mean_loss: (n_steps > 0).then(|| loss_sum / n_steps as f64),
    })
}

/// Rounds until the success rate stops growing by at least `min_improvement`
/// or `max_rounds` is reached. Round 0 reports the starting success rate.
pub fn reject_sampling(
    params: &mut PolicyParams,
    env: &Environment,
    tasks: &[Task],
    holdout: &EvalSet,
    cfg: &RejectSamplingConfig,
    seed: u64,
) -> Result<Vec<RoundReport>, TrainError> {
    let start = success_rate(params, holdout, env)?;
    let mut reports = vec![RoundReport { round: 0, n_new: 0, n_retained: 0, success_rate: start, mean_loss: None }];
    let mut retained = Retained::new();
    let mut prev = start;
    for round in 1..=cfg.max_rounds {
        let rep = reject_sampling_round(params, env, tasks, holdout, cfg, seed, round, &mut retained, prev)?;
        log::info!(
            "reject round {round}: retained {} (+{}), success {:.4}",
            rep.n_retained,
            rep.n_new,
            rep.success_rate
        );
        let gain = rep.success_rate - prev;
        prev = rep.success_rate;
        reports.push(rep);
        if gain < cfg.min_improvement {
            break;
        }
    }
    Ok(reports)
}

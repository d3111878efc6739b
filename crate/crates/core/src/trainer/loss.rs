//! The three RL loss terms, their weighted total, and the supervised
//! cross-entropy used by pretraining and rejection-sampling fine-tuning.
//!
//! Every function evaluates the loss and, on request, accumulates its exact
//! gradient. Per-sequence work runs in parallel; contributions are summed in
//! sample order so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dsl::Token;
use crate::policy::{ops::log_softmax, Gradients, PolicyParams};
use crate::reward::Branch;
use crate::task::PROMPT_LEN;

/// One sampled completion with everything the losses need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub task_id: u64,
    pub prompt: [Token; PROMPT_LEN],
    pub completion: Vec<Token>,
    /// Log-probabilities under the rollout-time parameters.
    pub old_logprobs: Vec<f64>,
    pub reward: f64,
    pub branch: Branch,
    /// Rollout-time value estimate for each completion position.
    pub values: Vec<f64>,
    /// `reward - values[t]`.
    pub advantages: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rollout {
    /// Prompt plus all but the last completion token: the states `s_t`.
    pub fn states(&self) -> Vec<Token> {
        let mut seq = self.prompt.to_vec();
        seq.extend_from_slice(&self.completion[..self.completion.len() - 1]);
        seq
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub samples: Vec<Rollout>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len().max(1) as f64
    }

    pub fn completion_rate(&self) -> f64 {
        let n = self.samples.iter().filter(|s| s.branch == Branch::Satisfied).count();
        n as f64 / self.samples.len().max(1) as f64
    }

    pub fn parse_rate(&self) -> f64 {
        let n = self.samples.iter().filter(|s| s.branch != Branch::Invalid).count();
        n as f64 / self.samples.len().max(1) as f64
    }

    pub fn refs(&self) -> Vec<&Rollout> {
        self.samples.iter().collect()
    }
}

/// Loss coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefs {
    pub clip_eps: f64,
    pub beta_ent: f64,
    pub beta_kl: f64,
    pub k1: f64,
    pub k2: f64,
}

/// Whether the policy term multiplies each token by its sensitivity weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Sensitivity,
    /// Plain PPO: the weights are ignored altogether.
    Off,
}

/// Multipliers on (policy, value, reg) in the differentiated objective.
/// The training objective is `[1, k1, k2]`; other mixes isolate single terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mix(pub [f64; 3]);

impl Mix {
    pub fn total(c: &LossCoefs) -> Self {
        Mix([1.0, c.k1, c.k2])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub policy: f64,
    pub value: f64,
    pub reg: f64,
    pub total: f64,
    /// Mean per-position entropy of the current policy.
    pub entropy: f64,
    /// Mean per-position KL to the reference snapshot.
    pub kl_ref: f64,
    /// Mean of `old - new` log-probability on sampled tokens.
    pub kl_old: f64,
    pub clip_frac: f64,
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// `sum_t (r - V_t)^2` for one sequence.
pub fn sequence_value_loss(reward: f64, values: &[f64]) -> f64 {
    values.iter().map(|v| (reward - v) * (reward - v)).sum()
}

pub fn total_loss(policy: f64, value: f64, reg: f64, k1: f64, k2: f64) -> f64 {
    policy + k1 * value + k2 * reg
}

#[derive(Default)]
struct SampleSums {
    surrogate: f64,
    sq_err: f64,
    entropy: f64,
    kl_ref: f64,
    kl_old: f64,
    clipped: usize,
    tokens: usize,
}

fn eval_sample(
    params: &PolicyParams,
    reference: &PolicyParams,
    s: &Rollout,
    c: &LossCoefs,
    mix: Mix,
    weighting: Weighting,
    n_seq: f64,
    n_pos: f64,
    want_grad: bool,
) -> Result<(SampleSums, Option<Gradients>), TrainError> {
    let t_len = s.completion.len();
    let states = s.states();
    let cache = params.forward_cached(&states)?;
    let ref_out = reference.forward(&states)?;
    let vocab = params.config().vocab_size;
    let logits = cache.logits();
    let values = cache.values();

    let mut sums = SampleSums { tokens: t_len, ..Default::default() };
    let mut dlogits = if want_grad { vec![0.0; states.len() * vocab] } else { Vec::new() };
    let mut dvalues = if want_grad { vec![0.0; states.len()] } else { Vec::new() };
    let mut logp = vec![0.0; vocab];
    let mut logq = vec![0.0; vocab];
    let [m_pol, m_val, m_reg] = mix.0;

    for t in 0..t_len {
        let pos = PROMPT_LEN - 1 + t;
        let row = &logits[pos * vocab..(pos + 1) * vocab];
        log_softmax(row, &mut logp);
        log_softmax(ref_out.logits_row(pos), &mut logq);
        let a = s.completion[t].index();

        let old = s.old_logprobs[t];
        if !old.is_finite() {
            return Err(TrainError::NonFinite { term: "ratio" });
        }
        let ratio = (logp[a] - old).exp();
        let adv = s.advantages[t];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - c.clip_eps, 1.0 + c.clip_eps) * adv;
        // Gradient flows through the ratio only when the unclipped term is the minimum.
        let (surr, active) = if unclipped <= clipped { (unclipped, true) } else { (clipped, false) };
        if !active {
            sums.clipped += 1;
        }
        let dsurr_dlogp = match weighting {
            Weighting::Sensitivity => {
                let w = s.weights[t];
                sums.surrogate += w * surr;
                if active { w * unclipped } else { 0.0 }
            }
            Weighting::Off => {
                sums.surrogate += surr;
                if active { unclipped } else { 0.0 }
            }
        };
        sums.kl_old += old - logp[a];

        let err = s.reward - values[pos];

        let mut h = 0.0;
        let mut kl = 0.0;
        for k in 0..vocab {
            let p = logp[k].exp();
            h -= p * logp[k];
            kl += p * (logp[k] - logq[k]);
        }
        sums.entropy += h;
        sums.kl_ref += kl;

        if want_grad {
            let g_logp = -m_pol * dsurr_dlogp / n_seq;
            let g_ent = m_reg * c.beta_ent / n_pos;
            let g_kl = m_reg * c.beta_kl / n_pos;
            let dz = &mut dlogits[pos * vocab..(pos + 1) * vocab];
            for k in 0..vocab {
                let p = logp[k].exp();
                let onehot = if k == a { 1.0 } else { 0.0 };
                dz[k] = g_logp * (onehot - p) + g_ent * p * (logp[k] + h) + g_kl * p * ((logp[k] - logq[k]) - kl);
            }
            dvalues[pos] = -2.0 * m_val * err / n_seq;
        }
    }

    sums.sq_err = sequence_value_loss(s.reward, &values[PROMPT_LEN - 1..PROMPT_LEN - 1 + t_len]);
    let grad = if want_grad {
        let mut g = Gradients::zeros_like(params);
        params.backward(&cache, &dlogits, &dvalues, &mut g);
        Some(g)
    } else {
        None
    };
    Ok((sums, grad))
}

/// Evaluate the RL losses on a minibatch and optionally the gradient of
/// `mix . (policy, value, reg)`.
pub fn rl_loss(
    params: &PolicyParams,
    reference: &PolicyParams,
    samples: &[&Rollout],
    c: &LossCoefs,
    mix: Mix,
    weighting: Weighting,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>), TrainError> {
    let n_seq = samples.len() as f64;
    let n_pos = samples.iter().map(|s| s.completion.len()).sum::<usize>() as f64;
    let parts: Vec<_> = samples
        .par_iter()
        .map(|s| eval_sample(params, reference, s, c, mix, weighting, n_seq, n_pos, want_grad))
        .collect::<Result<_, _>>()?;

    let mut tot = SampleSums::default();
    let mut grad = want_grad.then(|| Gradients::zeros_like(params));
    for (s, g) in &parts {
        tot.surrogate += s.surrogate;
        tot.sq_err += s.sq_err;
        tot.entropy += s.entropy;
        tot.kl_ref += s.kl_ref;
        tot.kl_old += s.kl_old;
        tot.clipped += s.clipped;
        tot.tokens += s.tokens;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_assign(g);
        }
    }
    let policy = -tot.surrogate / n_seq;
    let value = tot.sq_err / n_seq;
    let entropy = tot.entropy / n_pos;
    let kl_ref = tot.kl_ref / n_pos;
    let reg = -c.beta_ent * entropy + c.beta_kl * kl_ref;
    for (term, v) in [("policy", policy), ("value", value), ("reg", reg)] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite { term });
        }
    }
    let out = LossBreakdown {
        policy,
        value,
        reg,
        total: total_loss(policy, value, reg, c.k1, c.k2),
        entropy,
        kl_ref,
        kl_old: tot.kl_old / n_pos,
        clip_frac: tot.clipped as f64 / n_pos,
    };
    Ok((out, grad))
}

pub fn policy_loss(params: &PolicyParams, batch: &RolloutBatch, clip_eps: f64) -> Result<f64, TrainError> {
    let c = LossCoefs { clip_eps, beta_ent: 0.0, beta_kl: 0.0, k1: 0.0, k2: 0.0 };
    Ok(rl_loss(params, params, &batch.refs(), &c, Mix::total(&c), Weighting::Sensitivity, false)?.0.policy)
}

pub fn value_loss(params: &PolicyParams, batch: &RolloutBatch) -> Result<f64, TrainError> {
    let c = LossCoefs { clip_eps: 0.2, beta_ent: 0.0, beta_kl: 0.0, k1: 1.0, k2: 0.0 };
    Ok(rl_loss(params, params, &batch.refs(), &c, Mix::total(&c), Weighting::Sensitivity, false)?.0.value)
}

pub fn reg_loss(
    params: &PolicyParams,
    reference: &PolicyParams,
    batch: &RolloutBatch,
    beta_ent: f64,
    beta_kl: f64,
) -> Result<f64, TrainError> {
    let c = LossCoefs { clip_eps: 0.2, beta_ent, beta_kl, k1: 0.0, k2: 1.0 };
    Ok(rl_loss(params, reference, &batch.refs(), &c, Mix::total(&c), Weighting::Sensitivity, false)?.0.reg)
}

/// A supervised target: prompt and the completion to imitate.
pub type SftPair = ([Token; PROMPT_LEN], Vec<Token>);

/// Mean per-token negative log-likelihood of the completions, with gradient.
pub fn sft_loss(params: &PolicyParams, pairs: &[&SftPair], want_grad: bool) -> Result<(f64, Option<Gradients>), TrainError> {
    let n_tok = pairs.iter().map(|p| p.1.len()).sum::<usize>() as f64;
    let vocab = params.config().vocab_size;
    let parts: Vec<(f64, Option<Gradients>)> = pairs
        .par_iter()
        .map(|(prompt, comp)| -> Result<_, TrainError> {
            let mut seq = prompt.to_vec();
            seq.extend_from_slice(&comp[..comp.len() - 1]);
            let cache = params.forward_cached(&seq)?;
            let logits = cache.logits();
            let mut logp = vec![0.0; vocab];
            let mut nll = 0.0;
            let mut dlogits = if want_grad { vec![0.0; seq.len() * vocab] } else { Vec::new() };
            for (t, tok) in comp.iter().enumerate() {
                let pos = PROMPT_LEN - 1 + t;
                log_softmax(&logits[pos * vocab..(pos + 1) * vocab], &mut logp);
                nll -= logp[tok.index()];
                if want_grad {
                    let dz = &mut dlogits[pos * vocab..(pos + 1) * vocab];
                    for k in 0..vocab {
                        dz[k] = logp[k].exp() / n_tok;
                    }
                    dz[tok.index()] -= 1.0 / n_tok;
                }
            }
            let g = want_grad.then(|| {
                let mut g = Gradients::zeros_like(params);
                params.backward(&cache, &dlogits, &[], &mut g);
                g
            });
            Ok((nll, g))
        })
        .collect::<Result<_, _>>()?;
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| Gradients::zeros_like(params));
    for (l, g) in &parts {
        loss += l;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_assign(g);
        }
    }
    let loss = loss / n_tok;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { term: "cross_entropy" });
    }
    Ok((loss, grad))
}

//! Training stages: grammar pretraining, rejection-sampling fine-tuning and
//! the token-weighted PPO loop.

mod loss;
mod pretrain;
mod reject;
mod rl;

pub use loss::{
    clipped_surrogate, policy_loss, reg_loss, rl_loss, sequence_value_loss, sft_loss, total_loss, value_loss, LossBreakdown, LossCoefs,
    Mix, Rollout, RolloutBatch, SftPair, Weighting,
};
pub use pretrain::{grammar_pretrain, sft_step, PretrainConfig};
pub use reject::{reject_sampling, reject_sampling_round, RejectSamplingConfig, Retained, RetainedPair, RoundReport};
pub use rl::{collect_rollouts, rl_step, RlConfig, RlState, StepMetrics, DIAGNOSTICS_HEADER, METRICS_HEADER};

use crate::eval::EvalError;
use crate::policy::PolicyError;
use crate::task::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite value in the {term} term")]
    NonFinite { term: &'static str },
    #[error("no training tasks")]
    NoTasks,
}

/// Shared validation helper: adds `(field, msg)` when `ok` is false.
pub(crate) fn check(errs: &mut Vec<(String, String)>, ok: bool, field: &str, msg: &str) {
    if !ok {
        errs.push((field.to_string(), msg.to_string()));
    }
}

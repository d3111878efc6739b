use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{sft_loss, SftPair};
use super::{check, TrainError};
use crate::dsl::{tokenize_plan, OrchestrationPlan, PLAN_SPACE};
use crate::policy::{apply_update, AdamConfig, AdamState, PolicyParams};
use crate::rng::{self, tag};
use crate::task::{encode_prompt, TaskGenerator};

/// Grammar pretraining: imitate uniformly random valid plans, ignoring QoS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { steps: 300, batch_size: 32, lr: 1e-3 }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        check(&mut errs, self.batch_size > 0, "batch_size", "must be at least 1");
        check(&mut errs, self.lr >= 0.0 && self.lr.is_finite(), "lr", "must be finite and non-negative");
        errs
    }
}

/// One optimizer step of cross-entropy on `pairs`; returns the loss before the step.
pub fn sft_step(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
    pairs: &[&SftPair],
) -> Result<f64, TrainError> {
    let (loss, grad) = sft_loss(params, pairs, true)?;
    apply_update(params, &grad.expect("gradient requested"), adam, adam_cfg)?;
    Ok(loss)
}

/// Train on (prompt of a freshly drawn task, uniform random plan) pairs.
/// Returns the loss of every step.
pub fn grammar_pretrain(
    params: &mut PolicyParams,
    gen: &TaskGenerator,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let adam_cfg = AdamConfig { lr: cfg.lr, ..Default::default() };
    let mut adam = AdamState::new(params);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let pairs = (0..cfg.batch_size)
            .map(|i| {
                let mut r = rng::stream(seed, &[tag::PRETRAIN, step as u64, i as u64]);
                let task = gen.sample((step * cfg.batch_size + i) as u64, &mut r);
                let plan = OrchestrationPlan::from_index(r.random_range(0..PLAN_SPACE)).expect("index in range");
                Ok((encode_prompt(&task)?, tokenize_plan(&plan)))
            })
            .collect::<Result<Vec<SftPair>, TrainError>>()?;
        let refs: Vec<&SftPair> = pairs.iter().collect();
        let loss = sft_step(params, &mut adam, &adam_cfg, &refs)?;
        log::debug!("pretrain step {step}: loss {loss:.4}");
        losses.push(loss);
    }
    Ok(losses)
}

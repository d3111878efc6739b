//! Top-level run configuration. Every field has a default; unknown keys are
//! rejected when parsing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::EvalConfig;
use crate::ndt::LinkModelParams;
use crate::policy::ModelConfig;
use crate::reward::RewardWeights;
use crate::sensitivity::SensitivityConfig;
use crate::task::TaskGenConfig;
use crate::trainer::{PretrainConfig, RejectSamplingConfig, RlConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Training tasks written by `gen-tasks` (ids `0..train_tasks`).
    pub train_tasks: usize,
    pub model: ModelConfig,
    pub ndt: LinkModelParams,
    pub reward: RewardWeights,
    pub taskgen: TaskGenConfig,
    pub pretrain: PretrainConfig,
    pub reject: RejectSamplingConfig,
    pub rl: RlConfig,
    pub sensitivity: SensitivityConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            train_tasks: 2000,
            model: ModelConfig::default(),
            ndt: LinkModelParams::default(),
            reward: RewardWeights::default(),
            taskgen: TaskGenConfig::default(),
            pretrain: PretrainConfig::default(),
            reject: RejectSamplingConfig::default(),
            rl: RlConfig::default(),
            sensitivity: SensitivityConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Invalid(Vec<(String, String)>),
}

fn format_issues(issues: &[(String, String)]) -> String {
    issues
        .iter()
        .map(|(f, m)| format!("  {f}: {m}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Problems as `(section.field, message)` pairs.
    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut add = |section: &str, errs: Vec<(String, String)>| {
            out.extend(errs.into_iter().map(|(f, m)| (format!("{section}.{f}"), m)));
        };
        add("model", self.model.validate());
        add("ndt", self.ndt.validate());
        add("reward", self.reward.validate());
        add("taskgen", self.taskgen.validate());
        add("pretrain", self.pretrain.validate());
        add("reject", self.reject.validate());
        add("rl", self.rl.validate());
        add("sensitivity", self.sensitivity.validate());
        if self.eval.n_tasks == 0 {
            out.push(("eval.n_tasks".into(), "must be at least 1".into()));
        }
        if self.train_tasks == 0 {
            out.push(("train_tasks".into(), "must be at least 1".into()));
        }
        let train_end = self.train_tasks as u64;
        if self.reject.holdout_first_id < train_end || self.eval.first_id < train_end {
            out.push(("eval.first_id".into(), "held-out ids must not overlap training ids".into()));
        }
        if self.reject.holdout_first_id == self.eval.first_id {
            out.push(("reject.holdout_first_id".into(), "must differ from eval.first_id".into()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = RunConfig::default();
        assert!(c.issues().is_empty(), "{:?}", c.issues());
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"rl": {"clip": 0.1}}"#).unwrap_err().to_string();
        assert!(err.contains("clip"), "{err}");
        let err = RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn field_level_issues() {
        let mut c = RunConfig::default();
        c.model.n_heads = 5;
        c.rl.clip_eps = 1.5;
        let fields: Vec<String> = c.issues().into_iter().map(|i| i.0).collect();
        assert!(fields.contains(&"model.n_heads".to_string()));
        assert!(fields.contains(&"rl.clip_eps".to_string()));
    }
}

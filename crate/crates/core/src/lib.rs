//! Reinforcement learning from digital twin feedback for air-interface
//! orchestration.
//!
//! A small decoder-only policy reads a task prompt (channel SNR and QoS
//! targets) and emits a fixed-grammar orchestration plan. Plans are scored by
//! a closed-form network digital twin, and the policy is trained in three
//! stages: grammar pretraining, rejection-sampling fine-tuning, and
//! token-weighted PPO.

pub mod config;
pub mod dsl;
pub mod env;
pub mod eval;
pub mod io;
pub mod ndt;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sensitivity;
pub mod task;
pub mod trainer;

pub use dsl::{parse_plan, tokenize_plan, OrchestrationPlan, Token, Vocabulary};
pub use ndt::{oracle_best, simulate, LinkModelParams, QosResult};
pub use reward::{compute_reward, invalid_plan_reward, qos_satisfied, RewardValue, RewardWeights};
pub use task::{encode_prompt, QosTarget, ScenarioConfig, Task, TaskGenConfig, TaskGenerator};

pub use policy::{ModelConfig, PolicyParams};

//! The scoring environment: parse a completion, run it through the twin and
//! turn the measured QoS into a reward.

use serde::Serialize;

use crate::dsl::{parse_plan, OrchestrationPlan, Token};
use crate::ndt::{simulate, LinkModelParams, QosResult};
use crate::reward::{compute_reward, invalid_plan_reward, RewardValue, RewardWeights};
use crate::task::Task;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Environment {
    pub link: LinkModelParams,
    pub weights: RewardWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub reward: RewardValue,
    pub plan: Option<OrchestrationPlan>,
    pub qos: Option<QosResult>,
}

impl Environment {
    pub fn new(link: LinkModelParams, weights: RewardWeights) -> Self {
        Environment { link, weights }
    }

    pub fn score_plan(&self, task: &Task, plan: &OrchestrationPlan) -> Outcome {
        let q = simulate(plan, &task.scenario, &self.link);
        Outcome {
            reward: compute_reward(&q, &task.target, &self.weights),
            plan: Some(*plan),
            qos: Some(q),
        }
    }

    /// Unparseable completions get the invalid-plan reward.
    pub fn score(&self, task: &Task, completion: &[Token]) -> Outcome {
        match parse_plan(completion) {
            Ok(plan) => self.score_plan(task, &plan),
            Err(_) => Outcome {
                reward: invalid_plan_reward(&self.weights),
                plan: None,
                qos: None,
            },
        }
    }

    pub fn reward(&self, task: &Task, completion: &[Token]) -> RewardValue {
        self.score(task, completion).reward
    }
}

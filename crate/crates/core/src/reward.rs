//! QoS reward.
//!
//! A satisfied plan earns a positive base reward minus penalties for wasted
//! resources; a violating plan earns a negative base plus a bonus that grows
//! as the achieved QoS approaches the targets. All three metrics are compared
//! as dimensionless relative differences, BER in the log10 domain.

use serde::{Deserialize, Serialize};

use crate::ndt::QosResult;
use crate::task::QosTarget;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Penalty weights on (throughput, delay, BER) slack when satisfied.
    pub satisfied: [f64; 3],
    /// Bonus weights on (throughput, delay, BER) proximity when violated.
    pub violated: [f64; 3],
    pub base_satisfied: f64,
    pub base_violated: f64,
    pub satisfied_floor: f64,
    /// Lower bound on a gap before taking its reciprocal.
    pub gap_floor: f64,
    pub invalid: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            satisfied: [0.2, 0.1, 0.1],
            violated: [0.3, 0.3, 0.3],
            base_satisfied: 1.0,
            base_violated: -1.0,
            satisfied_floor: 0.05,
            gap_floor: 1e-9,
            invalid: -1.5,
        }
    }
}

impl RewardWeights {
    /// Largest value the violated branch can reach.
    pub fn violated_sup(&self) -> f64 {
        self.base_violated + self.violated.iter().sum::<f64>()
    }

    /// Field-level problems; empty when the weights keep the branches separated.
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        if self.satisfied.iter().chain(&self.violated).any(|w| !(*w >= 0.0)) {
            errs.push(("satisfied/violated".into(), "weights must be non-negative".into()));
        }
        if !(self.gap_floor > 0.0) {
            errs.push(("gap_floor".into(), "must be positive".into()));
        }
        if !(self.satisfied_floor > self.violated_sup()) {
            errs.push((
                "satisfied_floor".into(),
                format!("must exceed base_violated + sum(violated) = {}", self.violated_sup()),
            ));
        }
        if !(self.invalid < self.base_violated) {
            errs.push(("invalid".into(), "must be below base_violated".into()));
        }
        if !(self.satisfied_floor <= self.base_satisfied) {
            errs.push(("satisfied_floor".into(), "must not exceed base_satisfied".into()));
        }
        errs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Satisfied,
    Violated,
    Invalid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardValue {
    pub value: f64,
    pub branch: Branch,
}

impl RewardValue {
    pub fn satisfied(&self) -> bool {
        self.branch == Branch::Satisfied
    }
}

/// Boundary equality counts as satisfied.
pub fn qos_satisfied(q: &QosResult, target: &QosTarget) -> bool {
    q.throughput_bps >= target.thr_min_bps && q.delay_ms <= target.del_max_ms && q.ber <= target.ber_max
}

/// Signed relative differences `(thr, del, ber)`, positive where the target is beaten.
pub fn normalized_slack(q: &QosResult, target: &QosTarget) -> [f64; 3] {
    let log_target = target.ber_max.log10();
    [
        (q.throughput_bps - target.thr_min_bps) / target.thr_min_bps,
        (target.del_max_ms - q.delay_ms) / target.del_max_ms,
        (log_target - q.ber.log10()) / log_target.abs(),
    ]
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Satisfied-branch value for given slacks.
pub fn satisfied_value(slack: [f64; 3], w: &RewardWeights) -> f64 {
    let penalty: f64 = w.satisfied.iter().zip(slack).map(|(wi, s)| wi * s).sum();
    (w.base_satisfied - penalty).clamp(w.satisfied_floor, w.base_satisfied)
}

/// Violated-branch value for given gap magnitudes.
pub fn violated_value(gaps: [f64; 3], w: &RewardWeights) -> f64 {
    w.base_violated
        + w.violated
            .iter()
            .zip(gaps)
            .map(|(wi, g)| wi * sigmoid(1.0 / g.abs().max(w.gap_floor)))
            .sum::<f64>()
}

pub fn compute_reward(q: &QosResult, target: &QosTarget, w: &RewardWeights) -> RewardValue {
    let slack = normalized_slack(q, target);
    if qos_satisfied(q, target) {
        RewardValue {
            value: satisfied_value(slack, w),
            branch: Branch::Satisfied,
        }
    } else {
        RewardValue {
            value: violated_value(slack, w),
            branch: Branch::Violated,
        }
    }
}

/// Reward for a completion that does not parse into a plan.
pub fn invalid_plan_reward(w: &RewardWeights) -> RewardValue {
    RewardValue {
        value: w.invalid,
        branch: Branch::Invalid,
    }
}

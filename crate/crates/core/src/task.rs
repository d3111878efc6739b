//! Synthetic upper-layer tasks and their prompt encoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{enumerate_plans, OrchestrationPlan, PromptSlot, Token, PLAN_SPACE};
use crate::ndt::{self, LinkModelParams};
use crate::rng::{self, tag};

/// Number of tokens in an encoded prompt.
pub const PROMPT_LEN: usize = 6;

/// Channel context the twin needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub snr_db: f64,
}

/// QoS requirements attached to a task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosTarget {
    pub del_max_ms: f64,
    pub thr_min_bps: f64,
    pub ber_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskRecord", into = "TaskRecord")]
pub struct Task {
    pub id: u64,
    pub scenario: ScenarioConfig,
    pub target: QosTarget,
    pub feasible: bool,
}

/// Flat JSONL line for a task.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    id: u64,
    snr_db: f64,
    del_max_ms: f64,
    thr_min_bps: f64,
    ber_max: f64,
    feasible: bool,
}

impl From<Task> for TaskRecord {
    fn from(t: Task) -> Self {
        TaskRecord {
            id: t.id,
            snr_db: t.scenario.snr_db,
            del_max_ms: t.target.del_max_ms,
            thr_min_bps: t.target.thr_min_bps,
            ber_max: t.target.ber_max,
            feasible: t.feasible,
        }
    }
}

impl TryFrom<TaskRecord> for Task {
    type Error = String;

    fn try_from(r: TaskRecord) -> Result<Self, String> {
        let task = Task {
            id: r.id,
            scenario: ScenarioConfig { snr_db: r.snr_db },
            target: QosTarget {
                del_max_ms: r.del_max_ms,
                thr_min_bps: r.thr_min_bps,
                ber_max: r.ber_max,
            },
            feasible: r.feasible,
        };
        task.validate()?;
        Ok(task)
    }
}

impl Task {
    /// Check the field invariants (not the feasibility label).
    pub fn validate(&self) -> Result<(), String> {
        let t = &self.target;
        if !(self.scenario.snr_db >= 0.0 && self.scenario.snr_db < 32.0) {
            return Err(format!("snr_db {} outside [0, 32)", self.scenario.snr_db));
        }
        if !(t.del_max_ms > 0.0) {
            return Err(format!("del_max_ms {} must be positive", t.del_max_ms));
        }
        if !(t.thr_min_bps > 0.0) {
            return Err(format!("thr_min_bps {} must be positive", t.thr_min_bps));
        }
        if !(t.ber_max > 0.0 && t.ber_max <= 0.5) {
            return Err(format!("ber_max {} outside (0, 0.5]", t.ber_max));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskGenConfig {
    /// Probability that a generated task is feasible by construction.
    pub feasible_fraction: f64,
    /// Range of the throughput relaxation factor applied to the anchor.
    pub thr_slack: [f64; 2],
    /// Range of the delay relaxation factor applied to the anchor.
    pub del_slack: [f64; 2],
    /// Range, in decades, of the BER relaxation applied to the anchor.
    pub ber_slack_decades: [f64; 2],
    /// Infeasible tasks ask for this multiple of the best reachable throughput.
    pub infeasible_thr_factor: f64,
    /// Anchors below this throughput are redrawn so every target stays
    /// inside the prompt's throughput range.
    pub min_anchor_thr_bps: f64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        TaskGenConfig {
            feasible_fraction: 0.8,
            thr_slack: [0.5, 0.95],
            del_slack: [1.05, 1.5],
            ber_slack_decades: [0.5, 2.0],
            infeasible_thr_factor: 1.2,
            min_anchor_thr_bps: 2.0e4,
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                errs.push((field.to_string(), msg.to_string()));
            }
        };
        check(
            (0.0..=1.0).contains(&self.feasible_fraction),
            "feasible_fraction",
            "must lie in [0, 1]",
        );
        check(
            self.thr_slack[0] > 0.0 && self.thr_slack[0] <= self.thr_slack[1] && self.thr_slack[1] < 1.0,
            "thr_slack",
            "must satisfy 0 < lo <= hi < 1",
        );
        check(
            self.del_slack[0] >= 1.0 && self.del_slack[0] <= self.del_slack[1],
            "del_slack",
            "must satisfy 1 <= lo <= hi",
        );
        check(
            self.ber_slack_decades[0] >= 0.0 && self.ber_slack_decades[0] <= self.ber_slack_decades[1],
            "ber_slack_decades",
            "must satisfy 0 <= lo <= hi",
        );
        check(self.infeasible_thr_factor > 1.0, "infeasible_thr_factor", "must exceed 1");
        check(
            self.min_anchor_thr_bps * self.thr_slack[0] >= 1.0e4,
            "min_anchor_thr_bps",
            "times thr_slack[0] must be at least 1e4 bps",
        );
        errs
    }
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// Task generator backed by the digital twin.
#[derive(Clone, Debug)]
pub struct TaskGenerator {
    pub cfg: TaskGenConfig,
    pub link: LinkModelParams,
}

impl TaskGenerator {
    pub fn new(cfg: TaskGenConfig, link: LinkModelParams) -> Self {
        TaskGenerator { cfg, link }
    }

    /// Draw one task from `rng`.
    ///
    /// Feasible tasks relax an anchor plan's simulated QoS, so the anchor
    /// always satisfies them. Infeasible tasks demand more throughput than any
    /// plan reaches in the drawn scenario.
    pub fn sample(&self, id: u64, rng: &mut impl Rng) -> Task {
        self.sample_with_anchor(id, rng).0
    }

    /// Like [`sample`](Self::sample) but also returns the anchor plan.
    pub fn sample_with_anchor(&self, id: u64, rng: &mut impl Rng) -> (Task, OrchestrationPlan) {
        let feasible = rng.random::<f64>() < self.cfg.feasible_fraction;
        let scenario = ScenarioConfig {
            snr_db: 32.0 * rng.random::<f64>(),
        };
        let (anchor, q) = loop {
            let plan = OrchestrationPlan::from_index(rng.random_range(0..PLAN_SPACE)).unwrap();
            let q = ndt::simulate(&plan, &scenario, &self.link);
            if q.throughput_bps >= self.cfg.min_anchor_thr_bps {
                break (plan, q);
            }
        };
        let u1 = uniform(rng, self.cfg.thr_slack);
        let u2 = uniform(rng, self.cfg.del_slack);
        let u3 = uniform(rng, self.cfg.ber_slack_decades);
        let thr_min_bps = if feasible {
            q.throughput_bps * u1
        } else {
            self.cfg.infeasible_thr_factor * ndt::max_throughput(&scenario, &self.link)
        };
        let task = Task {
            id,
            scenario,
            target: QosTarget {
                del_max_ms: q.delay_ms * u2,
                thr_min_bps,
                ber_max: (q.ber * 10f64.powf(u3)).min(0.5),
            },
            feasible,
        };
        (task, anchor)
    }

    /// Task `id` of the stream identified by `seed`.
    pub fn task(&self, seed: u64, id: u64) -> Task {
        self.sample(id, &mut rng::stream(seed, &[tag::TASKS, id]))
    }

    pub fn task_with_anchor(&self, seed: u64, id: u64) -> (Task, OrchestrationPlan) {
        self.sample_with_anchor(id, &mut rng::stream(seed, &[tag::TASKS, id]))
    }

    /// Tasks with ids `first_id .. first_id + count`.
    pub fn generate(&self, seed: u64, first_id: u64, count: usize) -> Vec<Task> {
        (first_id..first_id + count as u64)
            .map(|id| self.task(seed, id))
            .collect()
    }

    /// Consecutive ids from `first_id` until `n_feasible` feasible tasks have
    /// been drawn; the infeasible tasks met on the way are kept too.
    pub fn generate_until_feasible(&self, seed: u64, first_id: u64, n_feasible: usize) -> Vec<Task> {
        let mut out = Vec::new();
        let mut found = 0;
        let mut id = first_id;
        while found < n_feasible {
            let t = self.task(seed, id);
            found += t.feasible as usize;
            out.push(t);
            id += 1;
            if self.cfg.feasible_fraction == 0.0 {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("cannot encode {field} = {value}: outside the prompt range {range}")]
pub struct PromptError {
    pub field: &'static str,
    pub value: f64,
    pub range: &'static str,
}

pub fn snr_bin(snr_db: f64) -> Result<usize, PromptError> {
    if !(0.0..32.0).contains(&snr_db) {
        return Err(PromptError { field: "snr_db", value: snr_db, range: "[0, 32)" });
    }
    Ok(((snr_db / 2.0).floor() as usize).min(15))
}

pub fn thr_bin(thr_bps: f64) -> Result<usize, PromptError> {
    if !(1.0e4..1.0e9).contains(&thr_bps) {
        return Err(PromptError { field: "thr_min_bps", value: thr_bps, range: "[1e4, 1e9)" });
    }
    Ok((((thr_bps.log10() - 4.0) * 16.0 / 5.0).floor().max(0.0) as usize).min(15))
}

pub fn del_bin(del_ms: f64) -> Result<usize, PromptError> {
    if !(1.0..33.0).contains(&del_ms) {
        return Err(PromptError { field: "del_max_ms", value: del_ms, range: "[1, 33)" });
    }
    Ok((((del_ms - 1.0) / 4.0).floor() as usize).min(7))
}

pub fn ber_bin(ber: f64) -> Result<usize, PromptError> {
    if !(1.0e-12..1.0).contains(&ber) {
        return Err(PromptError { field: "ber_max", value: ber, range: "[1e-12, 1)" });
    }
    Ok((((ber.log10() + 12.0) / 1.5).floor().max(0.0) as usize).min(7))
}

/// `[BOS_TASK, SNR, THR, DEL, BER, SEP]`.
pub fn encode_prompt(task: &Task) -> Result<[Token; PROMPT_LEN], PromptError> {
    Ok([
        Token::BOS_TASK,
        PromptSlot::Snr.token(snr_bin(task.scenario.snr_db)?),
        PromptSlot::Thr.token(thr_bin(task.target.thr_min_bps)?),
        PromptSlot::Del.token(del_bin(task.target.del_max_ms)?),
        PromptSlot::Ber.token(ber_bin(task.target.ber_max)?),
        Token::SEP,
    ])
}

/// Feasibility by exhaustive search: does any plan satisfy the target?
pub fn is_feasible(task: &Task, link: &LinkModelParams) -> bool {
    enumerate_plans().any(|p| {
        crate::reward::qos_satisfied(&ndt::simulate(&p, &task.scenario, link), &task.target)
    })
}

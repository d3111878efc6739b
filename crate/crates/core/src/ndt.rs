//! Closed-form network digital twin.
//!
//! Maps a plan and a channel scenario to a `(delay, throughput, BER)` triple
//! through a fixed chain: effective SNR, raw BER, residual BER after HARQ,
//! block error rate, expected transmissions, then throughput and delay. Also
//! hosts the exhaustive oracle over the whole plan space.

use serde::{Deserialize, Serialize};

use crate::dsl::{enumerate_plans, CodeRate, OrchestrationPlan, Receiver};
use crate::reward::{compute_reward, qos_satisfied, RewardWeights};
use crate::task::{ScenarioConfig, Task};

/// Simulated QoS of one plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosResult {
    pub delay_ms: f64,
    pub throughput_bps: f64,
    pub ber: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverModel {
    pub gain_db: f64,
    pub processing_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModelParams {
    /// Resource elements per PRB per layer per second (12 subcarriers x 14 symbols per 1 ms slot).
    pub symbols_per_prb: f64,
    /// Coding gain in dB for rates 1/3, 1/2, 2/3, 3/4, 5/6.
    pub code_gain_db: [f64; 5],
    pub conventional: ReceiverModel,
    pub neural: ReceiverModel,
    pub base_delay_ms: f64,
    pub rtt_ms: f64,
    pub block_bits: f64,
    pub ber_scale: f64,
    pub ber_exponent: f64,
    pub ber_floor: f64,
    pub ber_ceiling: f64,
}

impl Default for LinkModelParams {
    fn default() -> Self {
        LinkModelParams {
            symbols_per_prb: 168_000.0,
            code_gain_db: [6.0, 4.0, 3.0, 2.0, 1.0],
            conventional: ReceiverModel { gain_db: 0.0, processing_ms: 0.2 },
            neural: ReceiverModel { gain_db: 2.0, processing_ms: 0.8 },
            base_delay_ms: 1.0,
            rtt_ms: 4.0,
            block_bits: 1000.0,
            ber_scale: 0.2,
            ber_exponent: 1.5,
            ber_floor: 1.0e-12,
            ber_ceiling: 0.5,
        }
    }
}

impl LinkModelParams {
    pub fn receiver(&self, rx: Receiver) -> &ReceiverModel {
        match rx {
            Receiver::Conventional => &self.conventional,
            Receiver::Neural => &self.neural,
        }
    }

    pub fn code_gain(&self, rate: CodeRate) -> f64 {
        self.code_gain_db[rate as usize]
    }

    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        let positive = [
            ("symbols_per_prb", self.symbols_per_prb),
            ("base_delay_ms", self.base_delay_ms),
            ("rtt_ms", self.rtt_ms),
            ("block_bits", self.block_bits),
            ("ber_scale", self.ber_scale),
            ("ber_exponent", self.ber_exponent),
            ("ber_floor", self.ber_floor),
            ("conventional.processing_ms", self.conventional.processing_ms),
            ("neural.processing_ms", self.neural.processing_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                errs.push((name.to_string(), format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.ber_floor < self.ber_ceiling && self.ber_ceiling <= 0.5) {
            errs.push(("ber_ceiling".into(), "must satisfy ber_floor < ber_ceiling <= 0.5".into()));
        }
        if self.code_gain_db.iter().any(|g| !g.is_finite()) {
            errs.push(("code_gain_db".into(), "entries must be finite".into()));
        }
        errs
    }
}

/// Intermediate quantities of one simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkTrace {
    pub effective_snr_db: f64,
    pub raw_ber: f64,
    pub residual_ber: f64,
    pub block_error: f64,
    pub expected_tx: f64,
    pub delivery_prob: f64,
    pub qos: QosResult,
}

pub fn effective_snr_db(plan: &OrchestrationPlan, scenario: &ScenarioConfig, params: &LinkModelParams) -> f64 {
    scenario.snr_db - 10.0 * f64::from(plan.layers()).log10()
        + params.receiver(plan.receiver()).gain_db
        + params.code_gain(plan.code_rate())
}

pub fn trace(plan: &OrchestrationPlan, scenario: &ScenarioConfig, params: &LinkModelParams) -> LinkTrace {
    let eff_db = effective_snr_db(plan, scenario, params);
    let snr_lin = 10f64.powf(eff_db / 10.0);
    let m = plan.modulation().order();
    let raw_ber = (params.ber_scale * (-params.ber_exponent * snr_lin / (m - 1.0)).exp())
        .clamp(params.ber_floor, params.ber_ceiling);
    let tries = plan.n_retx() as i32 + 1;
    let residual_ber = raw_ber.powi(tries).clamp(params.ber_floor, params.ber_ceiling);

    // Work with the log block-success probability: at low SNR the block error
    // rounds to exactly 1 and the direct formulas would lose delivery entirely.
    let ln_block_ok = params.block_bits * (-raw_ber).ln_1p();
    let block_ok = ln_block_ok.exp();
    let block_error = -ln_block_ok.exp_m1();
    let expected_tx: f64 = (0..tries).map(|i| block_error.powi(i)).sum();
    let delivery_prob = -(f64::from(tries) * (-block_ok).ln_1p()).exp_m1();

    let bps = f64::from(plan.modulation().bits_per_symbol());
    let throughput_bps = f64::from(plan.n_prb())
        * params.symbols_per_prb
        * bps
        * plan.code_rate().value()
        * f64::from(plan.layers())
        * delivery_prob
        / expected_tx;
    let delay_ms = params.base_delay_ms
        + params.receiver(plan.receiver()).processing_ms
        + (expected_tx - 1.0) * params.rtt_ms;

    LinkTrace {
        effective_snr_db: eff_db,
        raw_ber,
        residual_ber,
        block_error,
        expected_tx,
        delivery_prob,
        qos: QosResult {
            delay_ms,
            throughput_bps,
            ber: residual_ber,
        },
    }
}

/// `q = NDT(c)`: deterministic QoS of `plan` in `scenario`.
pub fn simulate(plan: &OrchestrationPlan, scenario: &ScenarioConfig, params: &LinkModelParams) -> QosResult {
    trace(plan, scenario, params).qos
}

/// Highest throughput any plan reaches in `scenario`.
pub fn max_throughput(scenario: &ScenarioConfig, params: &LinkModelParams) -> f64 {
    enumerate_plans()
        .map(|p| simulate(&p, scenario, params).throughput_bps)
        .fold(0.0, f64::max)
}

/// Result of searching the whole plan space for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub task_id: u64,
    /// Best satisfying plan, absent when the task is infeasible.
    pub best_plan: Option<OrchestrationPlan>,
    pub best_reward: Option<f64>,
    /// How many of the 9600 plans satisfy the task.
    pub n_satisfying: usize,
}

impl OracleResult {
    pub fn is_feasible(&self) -> bool {
        self.best_plan.is_some()
    }
}

/// Exhaustive search for the reward-maximising satisfying plan.
///
/// Ties keep the first plan in enumeration order.
pub fn oracle_best(task: &Task, params: &LinkModelParams, weights: &RewardWeights) -> OracleResult {
    let mut best: Option<(OrchestrationPlan, f64)> = None;
    let mut n_satisfying = 0;
    for plan in enumerate_plans() {
        let q = simulate(&plan, &task.scenario, params);
        if !qos_satisfied(&q, &task.target) {
            continue;
        }
        n_satisfying += 1;
        let r = compute_reward(&q, &task.target, weights).value;
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((plan, r));
        }
    }
    OracleResult {
        task_id: task.id,
        best_plan: best.map(|b| b.0),
        best_reward: best.map(|b| b.1),
        n_satisfying,
    }
}

//! One-shot evaluation on held-out tasks and comparison across variants.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{tokenize_plan, OrchestrationPlan, Token, PLAN_LEN, PLAN_SPACE};
use crate::env::Environment;
use crate::ndt::{oracle_best, OracleResult};
use crate::policy::{sample_completion, Decoding, PolicyError, PolicyParams};
use crate::reward::Branch;
use crate::rng::{self, tag};
use crate::task::{encode_prompt, PromptError, Task, TaskGenerator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of feasible held-out tasks.
    pub n_tasks: usize,
    /// First held-out task id; keeps evaluation tasks disjoint from training.
    pub first_id: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_tasks: 500, first_id: 1_000_000 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("task {id}: {source}")]
    Prompt { id: u64, source: PromptError },
    #[error("comparison needs at least two reports")]
    TooFewReports,
}

/// Anything that maps a task to one completion.
pub trait PlanPolicy: Sync {
    fn name(&self) -> String;
    fn propose(&self, task: &Task) -> Result<Vec<Token>, EvalError>;
}

/// Greedy decoding with a trained policy.
pub struct GreedyPolicy<'a> {
    pub name: String,
    pub params: &'a PolicyParams,
}

impl PlanPolicy for GreedyPolicy<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn propose(&self, task: &Task) -> Result<Vec<Token>, EvalError> {
        let prompt = encode_prompt(task).map_err(|source| EvalError::Prompt { id: task.id, source })?;
        // Greedy decoding never touches the stream.
        let mut unused = rng::stream(0, &[]);
        Ok(sample_completion(self.params, &prompt, Decoding::Greedy, PLAN_LEN, &mut unused)?.tokens)
    }
}

/// A uniformly random valid plan per task, keyed by task id.
pub struct RandomValidPolicy {
    pub seed: u64,
}

impl PlanPolicy for RandomValidPolicy {
    fn name(&self) -> String {
        "random-valid".into()
    }

    fn propose(&self, task: &Task) -> Result<Vec<Token>, EvalError> {
        let mut r = rng::stream(self.seed, &[tag::BASELINE, task.id]);
        let plan = OrchestrationPlan::from_index(r.random_range(0..PLAN_SPACE)).expect("index in range");
        Ok(tokenize_plan(&plan))
    }
}

/// Emits the exhaustive-search optimum (or EOS when nothing satisfies).
pub struct OraclePolicy<'a> {
    pub env: &'a Environment,
}

impl PlanPolicy for OraclePolicy<'_> {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn propose(&self, task: &Task) -> Result<Vec<Token>, EvalError> {
        let o = oracle_best(task, &self.env.link, &self.env.weights);
        Ok(o.best_plan.map(|p| tokenize_plan(&p)).unwrap_or_else(|| vec![Token::EOS]))
    }
}

/// Always emits an unparseable completion.
pub struct JunkPolicy;

impl PlanPolicy for JunkPolicy {
    fn name(&self) -> String {
        "junk".into()
    }

    fn propose(&self, _task: &Task) -> Result<Vec<Token>, EvalError> {
        Ok(vec![Token::SEP; PLAN_LEN])
    }
}

/// Held-out tasks with their oracle solutions.
pub struct EvalSet {
    pub tasks: Vec<Task>,
    pub oracle: Vec<OracleResult>,
}

impl EvalSet {
    pub fn new(tasks: Vec<Task>, env: &Environment) -> Self {
        let oracle = tasks
            .par_iter()
            .map(|t| oracle_best(t, &env.link, &env.weights))
            .collect();
        EvalSet { tasks, oracle }
    }

    /// `cfg.n_tasks` feasible tasks from `cfg.first_id` on, plus the
    /// infeasible ones drawn along the way.
    pub fn held_out(gen: &TaskGenerator, seed: u64, cfg: &EvalConfig, env: &Environment) -> Self {
        Self::new(gen.generate_until_feasible(seed, cfg.first_id, cfg.n_tasks), env)
    }

    pub fn n_feasible(&self) -> usize {
        self.oracle.iter().filter(|o| o.is_feasible()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_feasible: usize,
    pub n_completed: usize,
    /// Completed fraction of feasible tasks.
    pub completion_rate: f64,
    /// Binomial standard error of `completion_rate`.
    pub completion_se: f64,
    /// Mean reward over completed tasks; absent when none completed.
    pub avg_score: Option<f64>,
    /// Mean oracle reward minus achieved reward over completed tasks.
    pub optimality_gap: Option<f64>,
    /// Feasible tasks whose completion did not parse.
    pub n_unparseable: usize,
    pub n_infeasible: usize,
    /// Mean reward on infeasible tasks; absent when there are none.
    pub infeasible_mean_reward: Option<f64>,
}

struct TaskResult {
    feasible: bool,
    branch: Branch,
    reward: f64,
    oracle_reward: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn evaluate(policy: &dyn PlanPolicy, set: &EvalSet, env: &Environment) -> Result<EvalReport, EvalError> {
    let results: Vec<TaskResult> = set
        .tasks
        .par_iter()
        .zip(&set.oracle)
        .map(|(task, oracle)| {
            let comp = policy.propose(task)?;
            let r = env.reward(task, &comp);
            Ok(TaskResult {
                feasible: oracle.is_feasible(),
                branch: r.branch,
                reward: r.value,
                oracle_reward: oracle.best_reward,
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let feasible: Vec<&TaskResult> = results.iter().filter(|r| r.feasible).collect();
    let completed: Vec<&&TaskResult> = feasible.iter().filter(|r| r.branch == Branch::Satisfied).collect();
    let n_feasible = feasible.len();
    let rate = if n_feasible > 0 { completed.len() as f64 / n_feasible as f64 } else { 0.0 };
    Ok(EvalReport {
        model: policy.name(),
        n_feasible,
        n_completed: completed.len(),
        completion_rate: rate,
        completion_se: if n_feasible > 0 { (rate * (1.0 - rate) / n_feasible as f64).sqrt() } else { 0.0 },
        avg_score: mean(completed.iter().map(|r| r.reward)),
        optimality_gap: mean(completed.iter().map(|r| r.oracle_reward.expect("feasible task has an optimum") - r.reward)),
        n_unparseable: feasible.iter().filter(|r| r.branch == Branch::Invalid).count(),
        n_infeasible: results.len() - n_feasible,
        infeasible_mean_reward: mean(results.iter().filter(|r| !r.feasible).map(|r| r.reward)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CompletionRate,
    AvgScore,
    OptimalityGap,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::CompletionRate, Metric::AvgScore, Metric::OptimalityGap];

    pub fn name(self) -> &'static str {
        match self {
            Metric::CompletionRate => "completion_rate",
            Metric::AvgScore => "avg_score",
            Metric::OptimalityGap => "optimality_gap",
        }
    }

    pub fn of(self, r: &EvalReport) -> Option<f64> {
        match self {
            Metric::CompletionRate => Some(r.completion_rate),
            Metric::AvgScore => r.avg_score,
            Metric::OptimalityGap => r.optimality_gap,
        }
    }

    /// Larger is better for every metric except the optimality gap.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::OptimalityGap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairDelta {
    pub a: String,
    pub b: String,
    pub metric: Metric,
    pub value_a: Option<f64>,
    pub value_b: Option<f64>,
    /// `value_a - value_b`.
    pub delta: Option<f64>,
    /// Name of the better variant, absent on a tie or missing value.
    pub better: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
    pub deltas: Vec<PairDelta>,
}

pub fn compare(reports: &[EvalReport]) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports);
    }
    let mut deltas = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            for m in Metric::ALL {
                let (va, vb) = (m.of(a), m.of(b));
                let delta = va.zip(vb).map(|(x, y)| x - y);
                let better = delta.and_then(|d| {
                    let a_wins = if m.higher_is_better() { d > 0.0 } else { d < 0.0 };
                    if d == 0.0 {
                        None
                    } else if a_wins {
                        Some(a.model.clone())
                    } else {
                        Some(b.model.clone())
                    }
                });
                deltas.push(PairDelta {
                    a: a.model.clone(),
                    b: b.model.clone(),
                    metric: m,
                    value_a: va,
                    value_b: vb,
                    delta,
                    better,
                });
            }
        }
    }
    Ok(Comparison { reports: reports.to_vec(), deltas })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Comparison {
    /// Per-variant metrics followed by all pairwise deltas.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "model_a", "model_b", "metric", "value_a", "value_b", "delta", "better"])
            .expect("in-memory write");
        for r in &self.reports {
            for m in Metric::ALL {
                w.write_record(["report", &r.model, "", m.name(), &opt(m.of(r)), "", "", ""])
                    .expect("in-memory write");
            }
        }
        for d in &self.deltas {
            w.write_record([
                "delta",
                &d.a,
                &d.b,
                d.metric.name(),
                &opt(d.value_a),
                &opt(d.value_b),
                &opt(d.delta),
                d.better.as_deref().unwrap_or(""),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Plain-text table for terminals.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>10} {:>10} {:>10} {:>10}", "model", "complete", "se", "avg_score", "opt_gap");
        for r in &self.reports {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<20} {:>10.4} {:>10.4} {:>10} {:>10}",
                r.model,
                r.completion_rate,
                r.completion_se,
                f(r.avg_score),
                f(r.optimality_gap)
            );
        }
        s
    }

    /// Two-column data file (`"model" value`) for a bar chart of one metric.
    pub fn bar_data(&self, metric: Metric) -> String {
        let mut s = format!("# model {}\n", metric.name());
        for r in &self.reports {
            let v = metric.of(r).map(|x| x.to_string()).unwrap_or_else(|| "NaN".into());
            let _ = writeln!(s, "\"{}\" {}", r.model, v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::TaskGenConfig;

    fn set(n: usize) -> (EvalSet, Environment) {
        let env = Environment::default();
        let gen = TaskGenerator::new(TaskGenConfig::default(), env.link.clone());
        let s = EvalSet::held_out(&gen, 3, &EvalConfig { n_tasks: n, first_id: 1_000_000 }, &env);
        (s, env)
    }

    #[test]
    fn oracle_policy_is_perfect() {
        let (s, env) = set(30);
        let r = evaluate(&OraclePolicy { env: &env }, &s, &env).unwrap();
        assert_eq!(r.n_feasible, 30);
        assert_eq!(r.completion_rate, 1.0);
        assert!(r.optimality_gap.unwrap().abs() < 1e-12);
        assert_eq!(r.n_infeasible, s.tasks.len() - 30);
    }

    #[test]
    fn junk_policy_completes_nothing() {
        let (s, env) = set(10);
        let r = evaluate(&JunkPolicy, &s, &env).unwrap();
        assert_eq!(r.completion_rate, 0.0);
        assert_eq!(r.avg_score, None);
        assert_eq!(r.optimality_gap, None);
        assert_eq!(r.n_unparseable, 10);
    }

    fn report(model: &str, rate: f64, score: Option<f64>) -> EvalReport {
        EvalReport {
            model: model.into(),
            n_feasible: 100,
            n_completed: (rate * 100.0) as usize,
            completion_rate: rate,
            completion_se: 0.0,
            avg_score: score,
            optimality_gap: score.map(|s| 1.0 - s),
            n_unparseable: 0,
            n_infeasible: 0,
            infeasible_mean_reward: None,
        }
    }

    #[test]
    fn compare_deltas_and_flags() {
        let c = compare(&[report("x", 0.75, Some(0.8)), report("y", 0.55, Some(0.7))]).unwrap();
        let d = &c.deltas[0];
        assert_eq!(d.metric, Metric::CompletionRate);
        assert!((d.delta.unwrap() - 0.20).abs() < 1e-12);
        assert_eq!(d.better.as_deref(), Some("x"));
        // Smaller gap wins.
        assert_eq!(c.deltas[2].better.as_deref(), Some("x"));

        let same = compare(&[report("x", 0.5, Some(0.6)), report("x", 0.5, Some(0.6))]).unwrap();
        assert!(same.deltas.iter().all(|d| d.delta == Some(0.0) && d.better.is_none()));
        assert!(compare(&[report("x", 0.5, None)]).is_err());
        let csv = c.to_csv();
        assert!(csv.starts_with("kind,model_a,model_b,metric"));
        assert!(c.bar_data(Metric::AvgScore).contains("\"y\" 0.7"));
    }
}

//! End-to-end stages over an output directory.
//!
//! Each stage reads the artifacts of the stages before it and writes its own
//! atomically:
//!
//! | stage          | writes                                                    |
//! |----------------|-----------------------------------------------------------|
//! | `gen_tasks`    | `tasks.jsonl`                                             |
//! | `pretrain`     | `checkpoints/init.bin`, `checkpoints/pretrained.bin`, `pretrain.csv` |
//! | `reject_sample`| `checkpoints/reject.bin`, `reject.csv`                    |
//! | `train_rl`     | `checkpoints/rldtf.bin`, `checkpoints/rl-NNNNNN.bin`, `metrics.csv`, `diagnostics.csv` |
//! | `eval`         | `eval.json`, `compare.csv`, `completion_rate.dat`, `avg_score.dat` |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, RunConfig};
use crate::env::Environment;
use crate::eval::{compare, evaluate, Comparison, EvalConfig, EvalError, EvalReport, EvalSet, GreedyPolicy, Metric, PlanPolicy, RandomValidPolicy};
use crate::io::{read_jsonl, write_atomic, write_json, write_jsonl};
use crate::policy::{read_checkpoint, write_checkpoint, PolicyError, PolicyParams};
use crate::rng::{self, tag};
use crate::task::{Task, TaskGenerator};
use crate::trainer::{
    grammar_pretrain, reject_sampling, rl_step, RlState, StepMetrics, TrainError, DIAGNOSTICS_HEADER,
    METRICS_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing artifact {path}; run `{stage}` first")]
    Missing { path: PathBuf, stage: &'static str },
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: PolicyError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Artifact locations under the output directory.
#[derive(Clone, Debug)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Paths { root: root.into() }
    }

    pub fn tasks(&self) -> PathBuf {
        self.root.join("tasks.jsonl")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.bin"))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn load_checkpoint(path: &Path, stage: &'static str) -> Result<PolicyParams, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Missing { path: path.into(), stage });
    }
    read_checkpoint(path).map_err(|source| PipelineError::Checkpoint { path: path.into(), source })
}

fn save_checkpoint(path: &Path, p: &PolicyParams) -> Result<(), PipelineError> {
    write_checkpoint(path, p).map_err(|source| PipelineError::Checkpoint { path: path.into(), source })
}

/// Everything a stage needs, derived from the config.
pub struct Context {
    pub cfg: RunConfig,
    pub paths: Paths,
    pub env: Environment,
    pub gen: TaskGenerator,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let paths = Paths::new(cfg.out_dir.clone());
        let env = Environment::new(cfg.ndt.clone(), cfg.reward.clone());
        let gen = TaskGenerator::new(cfg.taskgen.clone(), cfg.ndt.clone());
        Ok(Context { cfg, paths, env, gen })
    }

    fn load_tasks(&self) -> Result<Vec<Task>, PipelineError> {
        let path = self.paths.tasks();
        if !path.exists() {
            return Err(PipelineError::Missing { path, stage: "gen-tasks" });
        }
        read_jsonl(&path).map_err(io_err(&path))
    }
}

pub fn gen_tasks(ctx: &Context) -> Result<Vec<Task>, PipelineError> {
    let tasks = ctx.gen.generate(ctx.cfg.seed, 0, ctx.cfg.train_tasks);
    let path = ctx.paths.tasks();
    write_jsonl(&path, &tasks).map_err(io_err(&path))?;
    log::info!("wrote {} tasks to {}", tasks.len(), path.display());
    Ok(tasks)
}

pub fn pretrain(ctx: &Context) -> Result<PolicyParams, PipelineError> {
    let mut params = PolicyParams::init(ctx.cfg.model.clone(), &mut rng::stream(ctx.cfg.seed, &[tag::INIT]))?;
    save_checkpoint(&ctx.paths.checkpoint("init"), &params)?;
    let losses = grammar_pretrain(&mut params, &ctx.gen, &ctx.cfg.pretrain, ctx.cfg.seed)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, l);
    }
    let path = ctx.paths.file("pretrain.csv");
    write_atomic(&path, csv.as_bytes()).map_err(io_err(&path))?;
    save_checkpoint(&ctx.paths.checkpoint("pretrained"), &params)?;
    if let Some(l) = losses.last() {
        log::info!("pretraining done, final loss {l:.4}");
    }
    Ok(params)
}

pub fn reject_sample(ctx: &Context) -> Result<PolicyParams, PipelineError> {
    let tasks = ctx.load_tasks()?;
    let mut params = load_checkpoint(&ctx.paths.checkpoint("pretrained"), "pretrain")?;
    let holdout_cfg = EvalConfig {
        n_tasks: ctx.cfg.reject.n_holdout,
        first_id: ctx.cfg.reject.holdout_first_id,
    };
    let holdout = EvalSet::held_out(&ctx.gen, ctx.cfg.seed, &holdout_cfg, &ctx.env);
    let rounds = reject_sampling(&mut params, &ctx.env, &tasks, &holdout, &ctx.cfg.reject, ctx.cfg.seed)?;
    let mut csv = String::from("round,n_new,n_retained,success_rate,mean_loss\n");
    for r in &rounds {
        let loss = r.mean_loss.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{}", r.round, r.n_new, r.n_retained, r.success_rate, loss);
    }
    let path = ctx.paths.file("reject.csv");
    write_atomic(&path, csv.as_bytes()).map_err(io_err(&path))?;
    save_checkpoint(&ctx.paths.checkpoint("reject"), &params)?;
    Ok(params)
}

/// Run RL from the rejection-sampled checkpoint. `on_step` sees every step's metrics.
pub fn train_rl(ctx: &Context, mut on_step: impl FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>, PipelineError> {
    let tasks = ctx.load_tasks()?;
    let params = load_checkpoint(&ctx.paths.checkpoint("reject"), "reject-sample")?;
    let mut state = RlState::new(params);
    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let mut diag = String::from(DIAGNOSTICS_HEADER);
    diag.push('\n');
    let metrics_path = ctx.paths.file("metrics.csv");
    let diag_path = ctx.paths.file("diagnostics.csv");
    let mut all = Vec::with_capacity(ctx.cfg.rl.total_steps);
    for _ in 0..ctx.cfg.rl.total_steps {
        let before = state.reference.version();
        let m = rl_step(&mut state, &ctx.env, &tasks, &ctx.cfg.rl, &ctx.cfg.sensitivity, ctx.cfg.seed)?;
        metrics.push_str(&m.csv_row());
        metrics.push('\n');
        diag.push_str(&m.diagnostics_row());
        diag.push('\n');
        write_atomic(&metrics_path, metrics.as_bytes()).map_err(io_err(&metrics_path))?;
        write_atomic(&diag_path, diag.as_bytes()).map_err(io_err(&diag_path))?;
        if state.reference.version() != before {
            save_checkpoint(&ctx.paths.checkpoint(&format!("rl-{:06}", state.opt_steps)), &state.reference)?;
        }
        log::info!(
            "rl step {}: reward {:.4}, completion {:.3}, total loss {:.4}",
            m.step,
            m.mean_reward,
            m.completion_rate,
            m.total_loss
        );
        on_step(&m);
        all.push(m);
    }
    save_checkpoint(&ctx.paths.checkpoint("rldtf"), &state.params)?;
    Ok(all)
}

/// The benchmark variants, in the order they are reported.
pub const VARIANTS: [(&str, &str); 3] = [
    ("grammar-pretrained", "pretrained"),
    ("reject-sampled", "reject"),
    ("rldtf", "rldtf"),
];

pub fn eval(ctx: &Context) -> Result<Comparison, PipelineError> {
    let set = EvalSet::held_out(&ctx.gen, ctx.cfg.seed, &ctx.cfg.eval, &ctx.env);
    let mut reports: Vec<EvalReport> = Vec::new();
    let random = RandomValidPolicy { seed: ctx.cfg.seed };
    reports.push(evaluate(&random, &set, &ctx.env)?);
    for (name, ck) in VARIANTS {
        let stage = match ck {
            "pretrained" => "pretrain",
            "reject" => "reject-sample",
            _ => "train-rl",
        };
        let params = load_checkpoint(&ctx.paths.checkpoint(ck), stage)?;
        let policy = GreedyPolicy { name: name.into(), params: &params };
        let r = evaluate(&policy as &dyn PlanPolicy, &set, &ctx.env)?;
        log::info!("{name}: completion {:.4}", r.completion_rate);
        reports.push(r);
    }
    let cmp = compare(&reports)?;
    let p = ctx.paths.file("eval.json");
    write_json(&p, &reports).map_err(io_err(&p))?;
    let p = ctx.paths.file("compare.csv");
    write_atomic(&p, cmp.to_csv().as_bytes()).map_err(io_err(&p))?;
    for m in [Metric::CompletionRate, Metric::AvgScore] {
        let p = ctx.paths.file(&format!("{}.dat", m.name()));
        write_atomic(&p, cmp.bar_data(m).as_bytes()).map_err(io_err(&p))?;
    }
    Ok(cmp)
}

/// gen-tasks, pretrain, reject-sample, train-rl and eval in sequence.
pub fn run_all(ctx: &Context) -> Result<Comparison, PipelineError> {
    gen_tasks(ctx)?;
    pretrain(ctx)?;
    reject_sample(ctx)?;
    train_rl(ctx, |_| {})?;
    eval(ctx)
}

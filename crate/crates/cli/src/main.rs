use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use rldtf_core::config::RunConfig;
use rldtf_core::dsl::{parse_plan, Vocabulary, PLAN_LEN};
use rldtf_core::env::Environment;
use rldtf_core::io::{read_jsonl, write_jsonl};
use rldtf_core::ndt::{oracle_best, simulate};
use rldtf_core::pipeline::{self, Context};
use rldtf_core::policy::{read_checkpoint, sample_completion, Decoding};
use rldtf_core::rng;
use rldtf_core::sensitivity::{estimate_sensitivity, token_weights};
use rldtf_core::task::{encode_prompt, ScenarioConfig, Task};
use rldtf_core::OrchestrationPlan;
use serde_json::json;

#[derive(Parser)]
#[command(name = "rldtf", version, about = "Train and evaluate an orchestration policy against a network digital twin")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for parallel evaluation (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write training tasks as JSON lines.
    GenTasks {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        first_id: u64,
        /// Defaults to <out-dir>/tasks.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Grammar pretraining from a fresh initialisation.
    Pretrain,
    /// Rejection-sampling fine-tuning of the pretrained checkpoint.
    RejectSample,
    /// Token-weighted PPO from the rejection-sampled checkpoint.
    TrainRl,
    /// Evaluate all variants on held-out tasks.
    Eval,
    /// Run every stage in order.
    Pipeline,
    /// Evaluate one plan in the twin.
    Simulate {
        #[arg(long)]
        snr_db: f64,
        /// Plan as JSON, e.g. '{"modulation":"QPSK","code_rate":"1/2",...}'.
        #[arg(long, conflicts_with = "tokens")]
        plan: Option<String>,
        /// Plan as token names, e.g. "MOD_QPSK CR_1/2 PRB_16 LAY_1 RX_conv RETX_0 EOS".
        #[arg(long)]
        tokens: Option<String>,
    },
    /// Exhaustively search the best satisfying plan for a task.
    Oracle {
        #[command(flatten)]
        task: TaskArg,
    },
    /// Per-position reward sensitivity and token weights of a completion.
    Sensitivity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        task: TaskArg,
        /// Completion to analyse; defaults to the checkpoint's greedy decode.
        #[arg(long)]
        tokens: Option<String>,
    },
    /// Print the effective configuration with all defaults filled in.
    PrintConfig,
}

#[derive(Args)]
struct TaskArg {
    /// Task as a JSON object.
    #[arg(long, conflicts_with = "task_id")]
    task: Option<String>,
    /// Task id looked up in <out-dir>/tasks.jsonl.
    #[arg(long)]
    task_id: Option<u64>,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_task(arg: &TaskArg, cfg: &RunConfig) -> Result<Task> {
    if let Some(text) = &arg.task {
        return serde_json::from_str(text).context("parsing --task");
    }
    let id = arg.task_id.ok_or_else(|| anyhow!("pass --task or --task-id"))?;
    let path = cfg.out_dir.join("tasks.jsonl");
    let tasks: Vec<Task> = read_jsonl(&path).with_context(|| format!("reading {}", path.display()))?;
    tasks
        .into_iter()
        .find(|t| t.id == id)
        .ok_or_else(|| anyhow!("task {id} not found in {}", path.display()))
}

fn parse_tokens(text: &str) -> Result<Vec<rldtf_core::Token>> {
    Vocabulary::build().encode_names(text).map_err(|e| anyhow!("{e}"))
}

fn print_json(v: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    if let Some(n) = cli.global.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let env = Environment::new(cfg.ndt.clone(), cfg.reward.clone());
    match cli.cmd {
        Cmd::PrintConfig => println!("{}", cfg.to_json()),
        Cmd::GenTasks { count, first_id, output } => {
            let ctx = Context::new(cfg.clone())?;
            let tasks = ctx.gen.generate(cfg.seed, first_id, count.unwrap_or(cfg.train_tasks));
            let path = output.unwrap_or_else(|| ctx.paths.tasks());
            write_jsonl(&path, &tasks).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {} tasks to {}", tasks.len(), path.display());
        }
        Cmd::Pretrain => {
            pipeline::pretrain(&Context::new(cfg)?)?;
        }
        Cmd::RejectSample => {
            pipeline::reject_sample(&Context::new(cfg)?)?;
        }
        Cmd::TrainRl => {
            pipeline::train_rl(&Context::new(cfg)?, |_| {})?;
        }
        Cmd::Eval => {
            let cmp = pipeline::eval(&Context::new(cfg)?)?;
            print!("{}", cmp.table());
        }
        Cmd::Pipeline => {
            let cmp = pipeline::run_all(&Context::new(cfg)?)?;
            print!("{}", cmp.table());
        }
        Cmd::Simulate { snr_db, plan, tokens } => {
            let plan: OrchestrationPlan = match (plan, tokens) {
                (Some(p), _) => serde_json::from_str(&p).context("parsing --plan")?,
                (None, Some(t)) => parse_plan(&parse_tokens(&t)?)?,
                (None, None) => bail!("pass --plan or --tokens"),
            };
            let q = simulate(&plan, &ScenarioConfig { snr_db }, &env.link);
            print_json(json!({ "plan": plan, "snr_db": snr_db, "qos": q }))?;
        }
        Cmd::Oracle { task } => {
            let task = resolve_task(&task, &cfg)?;
            print_json(json!(oracle_best(&task, &env.link, &env.weights)))?;
        }
        Cmd::Sensitivity { checkpoint, task, tokens } => {
            let task = resolve_task(&task, &cfg)?;
            let params = load_checkpoint(&checkpoint)?;
            let completion = match tokens {
                Some(t) => parse_tokens(&t)?,
                None => {
                    let prompt = encode_prompt(&task)?;
                    let mut unused = rng::stream(cfg.seed, &[]);
                    sample_completion(&params, &prompt, Decoding::Greedy, PLAN_LEN, &mut unused)?.tokens
                }
            };
            if completion.is_empty() || completion.len() > PLAN_LEN {
                bail!("completion must have 1 to {PLAN_LEN} tokens");
            }
            let r0 = env.reward(&task, &completion);
            let s = estimate_sensitivity(&env, &task, &completion, r0.value, &cfg.sensitivity, cfg.seed, &[]);
            let w = token_weights(&s, &cfg.sensitivity);
            let names: Vec<String> = completion.iter().map(|t| t.to_string()).collect();
            let plan = parse_plan(&completion).ok();
            print_json(json!({
                "task_id": task.id,
                "completion": names,
                "plan": plan,
                "reward": r0,
                "sensitivity": s,
                "weights": w,
            }))?;
        }
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<rldtf_core::PolicyParams> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

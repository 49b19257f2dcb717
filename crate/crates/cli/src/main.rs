use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use masa_core::harness::{
    analyze_log, evaluate, load_checkpoint, replay_log, run, LogReader, RunConfig,
};
use masa_core::policy::SimPolicy;
use masa_core::harness::Universe;
use masa_core::{Algorithm, Mode};

#[derive(Parser)]
#[command(name = "masa", version, about = "Meta-aware RL post-training on a simulated policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write logs, metrics, experts, and checkpoints.
    Run(RunArgs),
    /// Recompute every step metric from a run log and compare with the logged values.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Score the rollout and meta records of any log, group by group.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        /// Print one JSON object per group instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a checkpoint on the held-out tasks.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Masa,
    MasaEfficient,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Grpo,
    Dapo,
}

#[derive(Args)]
struct Common {
    /// TOML file with `train`, `universe`, `sim`, `world`, and `run` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of training steps.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate; the initial policy when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    /// Feed predicted notions into the solution prompt.
    #[arg(long)]
    hints: bool,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.rng_seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.train.mode = match mode {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Masa => Mode::Masa,
            ModeArg::MasaEfficient => Mode::MasaEfficient,
        };
    }
    if let Some(alg) = common.algorithm {
        cfg.train.algorithm = match alg {
            AlgorithmArg::Grpo => Algorithm::Grpo,
            AlgorithmArg::Dapo => Algorithm::Dapo,
        };
    }
    Ok(cfg)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.common)?;
    if let Some(out) = args.out {
        cfg.run.out_dir = out;
    }
    if let Some(steps) = args.steps {
        cfg.train.total_steps = steps;
        cfg.train.efficient_start = cfg.train.efficient_start.min(steps);
    }
    let summary = run(&cfg).with_context(|| format!("run into {}", cfg.run.out_dir.display()))?;
    let last = summary.metrics.last();
    println!(
        "steps {}  tokens {}  experts {}  bc flushes {}",
        summary.metrics.len(),
        summary.tokens_generated(),
        summary.experts,
        summary.flushes.len()
    );
    if let Some(m) = last {
        println!(
            "final step: pass_rate {}  difficulty_gap {}  length_gap {}  gating {}",
            fmt_opt(m.pass_rate),
            fmt_opt(m.difficulty_gap),
            fmt_opt(m.length_gap),
            fmt_opt(m.gating_proportion)
        );
    }
    if let Some(e) = summary.final_eval() {
        println!("eval@{}: pass@1 {:.4}  pass@{} {:.4}", e.step, e.pass_at_1, e.samples, e.pass_at_n);
    }
    println!("artifacts in {}", cfg.run.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn read_log(path: &Path) -> Result<Vec<masa_core::harness::LogRecord>> {
    LogReader::read_path(path).with_context(|| format!("reading log {}", path.display()))
}

fn cmd_replay(log: &Path) -> Result<ExitCode> {
    let records = read_log(log)?;
    let report = replay_log(&records)?;
    println!(
        "replayed {} steps: {} mismatched, {} missing",
        report.recomputed.len(),
        report.mismatched_steps.len(),
        report.missing_steps.len()
    );
    for s in &report.mismatched_steps {
        println!("mismatch at step {s}");
    }
    for s in &report.missing_steps {
        println!("missing step {s}");
    }
    Ok(if report.matches() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_analyze(log: &Path, json: bool) -> Result<ExitCode> {
    let records = read_log(log)?;
    let groups = analyze_log(&records);
    if groups.is_empty() {
        bail!("no rollout or meta records in {}", log.display());
    }
    for g in &groups {
        if json {
            println!("{}", serde_json::to_string(g)?);
            continue;
        }
        println!(
            "step {} slot {} task {}: pass_rate {:.4}  rewards {:?}  parsed metas {}/{}",
            g.step,
            g.slot,
            g.task_id,
            g.pass_rate,
            g.solution_rewards,
            g.parsed_metas,
            g.meta_rewards.len()
        );
        for (i, r) in g.meta_rewards.iter().enumerate() {
            println!(
                "  meta {i}: length {:.9}  difficulty {:.9}  notion {:.9}  total {:.9}",
                r.r_length, r.r_difficulty, r.r_notion, r.r_meta
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.samples {
        cfg.run.eval_samples = n;
    }
    cfg.run.eval_hints |= args.hints;
    cfg.validate()?;
    let sim = SimPolicy::new(cfg.world.clone(), cfg.sim.clone(), cfg.train.max_response_tokens)?;
    let universe = Universe::generate(&cfg.universe, &cfg.world, cfg.train.rng_seed)?;
    let (params, step) = match &args.checkpoint {
        Some(path) => {
            let state = load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
            (state.params, state.step)
        }
        None => (sim.init_params(), 0),
    };
    let tasks = if universe.eval.is_empty() { &universe.train } else { &universe.eval };
    let report = evaluate(&sim, &params, tasks, &cfg.eval_options(step))?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay { log } => cmd_replay(&log),
        Command::Analyze { log, json } => cmd_analyze(&log, json),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

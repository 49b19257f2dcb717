//! End-to-end runs: task generation, the step loop, periodic evaluation, and
//! on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalOptions, EvalReport};
use super::log::{EvalRecord, HeaderRecord, LogRecord, LogWriter, MetaLogRecord, RolloutRecord, StepRecord, LOG_SCHEMA_VERSION};
use super::metrics::{SolutionObs, StepMetrics};
use super::trainer::{BcFlush, StepOutput, TrainState, TrainTelemetry, Trainer};
use super::universe::{SimUniverseConfig, Universe};
use crate::error::{MasaError, Result};
use crate::expert::ExpertTrajectory;
use crate::policy::{PolicyParams, SimPolicy, SimPolicyConfig, SimWorld};
use crate::textmeta::parse_meta_output;
use crate::types::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Evaluate every this many steps (and after the last); 0 disables.
    pub eval_every: u64,
    pub eval_samples: usize,
    /// Feed predicted notions into evaluation prompts.
    pub eval_hints: bool,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub log_rollouts: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            eval_every: 50,
            eval_samples: 8,
            eval_hints: false,
            checkpoint_every: 100,
            log_rollouts: true,
        }
    }
}

/// The full run configuration, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub universe: SimUniverseConfig,
    pub sim: SimPolicyConfig,
    pub world: SimWorld,
    pub run: RunOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::desk(),
            universe: SimUniverseConfig::default(),
            sim: SimPolicyConfig::default(),
            world: SimWorld::default(),
            run: RunOptions::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML tree; keys it omits keep their [`RunConfig::default`]
    /// values, including inside partially given tables.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| MasaError::Config(e.to_string());
        let given: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, serde_json::to_value(given)?);
        serde_json::from_value(merged).map_err(|e| err(&e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.world.validate()?;
        self.universe.validate(&self.world)
    }

    pub fn build(&self) -> Result<(SimPolicy, Universe)> {
        self.validate()?;
        let sim = SimPolicy::new(self.world.clone(), self.sim.clone(), self.train.max_response_tokens)?;
        let universe = Universe::generate(&self.universe, &self.world, self.train.rng_seed)?;
        Ok((sim, universe))
    }

    pub fn eval_options(&self, step: u64) -> EvalOptions {
        EvalOptions {
            samples: self.run.eval_samples,
            budget: self.train.max_response_tokens,
            seed: self.train.rng_seed,
            step,
            hint_metas: self.run.eval_hints.then_some(self.train.meta_size.max(2)),
            hint_cap: self.train.hint_cap,
        }
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(slot) => merge(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub metrics: Vec<StepMetrics>,
    pub telemetry: Vec<TrainTelemetry>,
    pub evals: Vec<EvalReport>,
    pub final_state: TrainState,
    pub flushes: Vec<BcFlush>,
    pub experts: usize,
}

impl RunSummary {
    pub fn final_params(&self) -> &PolicyParams {
        &self.final_state.params
    }

    pub fn tokens_generated(&self) -> u64 {
        self.final_state.tokens_generated
    }

    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals.last()
    }
}

struct Artifacts {
    dir: PathBuf,
    log: LogWriter,
    csv: csv::Writer<fs::File>,
    experts: LogLines,
}

struct LogLines(std::io::BufWriter<fs::File>);

impl LogLines {
    fn write(&mut self, e: &ExpertTrajectory) -> Result<()> {
        use std::io::Write;
        serde_json::to_writer(&mut self.0, e)?;
        self.0.write_all(b"\n")?;
        Ok(())
    }
}

impl Artifacts {
    fn create(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.run.out_dir.clone();
        fs::create_dir_all(dir.join("checkpoints"))?;
        let mut log = LogWriter::create(&dir.join("rollouts.jsonl"))?;
        log.write(&LogRecord::Header(HeaderRecord {
            v: LOG_SCHEMA_VERSION,
            config: cfg.clone(),
        }))?;
        Ok(Self {
            csv: csv::Writer::from_path(dir.join("metrics.csv")).map_err(csv_err)?,
            experts: LogLines(std::io::BufWriter::new(fs::File::create(dir.join("experts.jsonl"))?)),
            log,
            dir,
        })
    }

    fn checkpoint(&self, state: &TrainState) -> Result<()> {
        let path = self.dir.join("checkpoints").join(format!("step_{:05}.json", state.step));
        fs::write(path, serde_json::to_vec(state)?)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        use std::io::Write;
        self.log.finish()?;
        self.csv.flush()?;
        self.experts.0.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> MasaError {
    MasaError::Io(std::io::Error::other(e.to_string()))
}

/// The log records of one step, in slot order: metas, rollouts, shadow
/// rollouts, then the step record.
pub fn step_records(out: &StepOutput, max_response_tokens: u32, with_rollouts: bool) -> Vec<LogRecord> {
    let mut records = Vec::new();
    if with_rollouts {
        for (slot, (obs, sc)) in out.observations.iter().zip(&out.scores).enumerate() {
            let meta_adv = out.meta_advantages[slot].as_deref();
            for (i, m) in obs.metas.iter().enumerate() {
                records.push(LogRecord::Meta(MetaLogRecord {
                    v: LOG_SCHEMA_VERSION,
                    step: obs.step,
                    slot,
                    task_id: obs.task_id.clone(),
                    problem: obs.problem.clone(),
                    ground_truth: obs.ground_truth.clone(),
                    true_notions: obs.true_notions.clone(),
                    index: i,
                    text: m.text.clone(),
                    tokens: m.tokens,
                    parse_ok: Some(parse_meta_output(&m.text, max_response_tokens).parse_ok),
                    rewards: sc.meta_rewards.get(i).copied(),
                    advantage: meta_adv.map(|a| a[i]),
                }));
            }
            let sol_adv = out.solution_advantages[slot].as_deref();
            let rollout = |i: usize, s: &SolutionObs, shadow: bool| {
                LogRecord::Rollout(RolloutRecord {
                    v: LOG_SCHEMA_VERSION,
                    step: obs.step,
                    slot,
                    task_id: obs.task_id.clone(),
                    problem: obs.problem.clone(),
                    ground_truth: obs.ground_truth.clone(),
                    true_notions: obs.true_notions.clone(),
                    index: i,
                    shadow,
                    text: s.text.clone(),
                    length: s.length,
                    truncated: s.truncated,
                    stop: s.stop,
                    would_be_correct: s.would_be_correct,
                    reward: (!shadow).then(|| sc.solution_rewards[i]),
                    advantage: if shadow { None } else { sol_adv.map(|a| a[i]) },
                })
            };
            records.extend(obs.solutions.iter().enumerate().map(|(i, s)| rollout(i, s, false)));
            records.extend(obs.shadow.iter().enumerate().map(|(i, s)| rollout(i, s, true)));
        }
    }
    records.push(LogRecord::Step(StepRecord {
        v: LOG_SCHEMA_VERSION,
        metrics: out.metrics.clone(),
        train: Some(out.telemetry.clone()),
    }));
    records
}

fn execute(cfg: &RunConfig, mut artifacts: Option<&mut Artifacts>) -> Result<RunSummary> {
    let (sim, universe) = cfg.build()?;
    let eval_tasks = if universe.eval.is_empty() { universe.train.clone() } else { universe.eval.clone() };
    let mut trainer = Trainer::new(cfg.train.clone(), sim, universe.train)?;
    let total = cfg.train.total_steps;
    let mut summary = RunSummary {
        metrics: Vec::with_capacity(total as usize),
        telemetry: Vec::with_capacity(total as usize),
        evals: Vec::new(),
        final_state: trainer.state.clone(),
        flushes: Vec::new(),
        experts: 0,
    };
    for step in 1..=total {
        let out = trainer.step()?;
        tracing::debug!(step, pass_rate = ?out.metrics.pass_rate, tokens = out.metrics.tokens_generated, "step");
        if let Some(a) = artifacts.as_deref_mut() {
            for r in step_records(&out, cfg.train.max_response_tokens, cfg.run.log_rollouts) {
                a.log.write(&r)?;
            }
            a.csv.serialize(&out.metrics).map_err(csv_err)?;
            for e in &out.experts {
                a.experts.write(e)?;
            }
        }
        let evaluate_now = cfg.run.eval_every > 0 && (step % cfg.run.eval_every == 0 || step == total);
        if evaluate_now {
            let report = evaluate(&trainer.sim, &trainer.state.params, &eval_tasks, &cfg.eval_options(step))?;
            tracing::info!(step, pass_at_1 = report.pass_at_1, pass_at_n = report.pass_at_n, "eval");
            if let Some(a) = artifacts.as_deref_mut() {
                a.log.write(&LogRecord::Eval(EvalRecord {
                    v: LOG_SCHEMA_VERSION,
                    report: report.clone(),
                }))?;
            }
            summary.evals.push(report);
        }
        if let Some(a) = artifacts.as_deref_mut() {
            let every = cfg.run.checkpoint_every;
            if (every > 0 && step % every == 0) || step == total {
                a.checkpoint(&trainer.state)?;
            }
        }
        summary.experts += out.experts.len();
        summary.flushes.extend(out.telemetry.bc.iter().cloned());
        summary.metrics.push(out.metrics);
        summary.telemetry.push(out.telemetry);
    }
    summary.final_state = trainer.state;
    Ok(summary)
}

/// Runs without touching the filesystem.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunSummary> {
    execute(cfg, None)
}

/// Runs and writes `rollouts.jsonl`, `metrics.csv`, `experts.jsonl`, and
/// `checkpoints/` under `cfg.run.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let mut artifacts = Artifacts::create(cfg)?;
    let summary = execute(cfg, Some(&mut artifacts))?;
    artifacts.finish()?;
    Ok(summary)
}

/// Loads a checkpoint written by [`run`].
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

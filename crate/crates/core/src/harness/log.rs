//! Line-delimited JSON run logs.
//!
//! Every line is one self-describing record tagged by `kind` and carrying a
//! schema version `v`. Floats in rollout, meta, step, and eval records are
//! written with 9 significant digits; the header keeps the run config
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::eval::EvalReport;
use super::metrics::StepMetrics;
use super::run::RunConfig;
use super::trainer::TrainTelemetry;
use crate::error::{MasaError, Result};
use crate::rewards::RewardBreakdown;
use crate::types::StopReason;

pub const LOG_SCHEMA_VERSION: u32 = 1;

fn v1() -> u32 {
    LOG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    #[serde(default = "v1")]
    pub v: u32,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    #[serde(default = "v1")]
    pub v: u32,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub slot: usize,
    pub task_id: String,
    pub problem: String,
    pub ground_truth: String,
    #[serde(default)]
    pub true_notions: Vec<String>,
    #[serde(default)]
    pub index: usize,
    #[serde(default)]
    pub shadow: bool,
    pub text: String,
    #[serde(default)]
    pub length: usize,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default = "eos")]
    pub stop: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub would_be_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}

fn eos() -> StopReason {
    StopReason::Eos
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLogRecord {
    #[serde(default = "v1")]
    pub v: u32,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub slot: usize,
    pub task_id: String,
    pub problem: String,
    pub ground_truth: String,
    #[serde(default)]
    pub true_notions: Vec<String>,
    #[serde(default)]
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(default = "v1")]
    pub v: u32,
    pub metrics: StepMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainTelemetry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(default = "v1")]
    pub v: u32,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header(HeaderRecord),
    Rollout(RolloutRecord),
    Meta(MetaLogRecord),
    Step(StepRecord),
    Eval(EvalRecord),
}

/// Rounds to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round9(n.as_f64().expect("f64 number"));
            if let Some(r) = serde_json::Number::from_f64(x) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Serializes a record as one JSON line.
pub fn encode_record(record: &LogRecord) -> Result<String> {
    let mut value = serde_json::to_value(record)?;
    if !matches!(record, LogRecord::Header(_)) {
        round_floats(&mut value);
    }
    Ok(serde_json::to_string(&value)?)
}

/// Append-only JSONL writer.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<()> {
        let line = encode_record(record)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads every record of a log; errors carry 1-based line numbers.
pub struct LogReader;

impl LogReader {
    pub fn read_path(path: &Path) -> Result<Vec<LogRecord>> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn read(reader: impl BufRead) -> Result<Vec<LogRecord>> {
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LogRecord = serde_json::from_str(&line).map_err(|e| MasaError::Log {
                line: i + 1,
                message: e.to_string(),
            })?;
            let v = match &record {
                LogRecord::Header(r) => r.v,
                LogRecord::Rollout(r) => r.v,
                LogRecord::Meta(r) => r.v,
                LogRecord::Step(r) => r.v,
                LogRecord::Eval(r) => r.v,
            };
            if v != LOG_SCHEMA_VERSION {
                return Err(MasaError::Log {
                    line: i + 1,
                    message: format!("unsupported schema version {v}"),
                });
            }
            out.push(record);
        }
        Ok(out)
    }
}

//! Metric recomputation from logs alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::log::{encode_record, LogRecord, StepRecord, LOG_SCHEMA_VERSION};
use super::metrics::{aggregate_step, score_group, GroupObservation, MetaObs, SolutionObs, StepMetrics};
use crate::error::{MasaError, Result};
use crate::rewards::RewardBreakdown;
use crate::types::{Mode, TrainConfig};

/// `(step, slot, task id)`; external logs may omit step and slot.
type GroupKey = (u64, usize, String);

#[allow(clippy::too_many_arguments)]
fn group<'m>(
    groups: &'m mut BTreeMap<GroupKey, GroupObservation>,
    step: u64,
    slot: usize,
    task_id: &str,
    problem: &str,
    ground_truth: &str,
    true_notions: &[String],
) -> &'m mut GroupObservation {
    groups.entry((step, slot, task_id.to_string())).or_insert_with(|| GroupObservation {
        step,
        slot,
        task_id: task_id.to_string(),
        problem: problem.to_string(),
        ground_truth: ground_truth.to_string(),
        true_notions: true_notions.to_vec(),
        metas: Vec::new(),
        solutions: Vec::new(),
        shadow: Vec::new(),
    })
}

/// Groups meta and rollout records by [`GroupKey`], keeping record order.
pub fn observations(records: &[LogRecord]) -> BTreeMap<GroupKey, GroupObservation> {
    let mut groups = BTreeMap::new();
    for r in records {
        match r {
            LogRecord::Meta(m) => {
                let g = group(&mut groups, m.step, m.slot, &m.task_id, &m.problem, &m.ground_truth, &m.true_notions);
                g.metas.push(MetaObs {
                    text: m.text.clone(),
                    tokens: m.tokens,
                });
            }
            LogRecord::Rollout(s) => {
                let g = group(&mut groups, s.step, s.slot, &s.task_id, &s.problem, &s.ground_truth, &s.true_notions);
                let obs = SolutionObs {
                    text: s.text.clone(),
                    length: s.length,
                    truncated: s.truncated,
                    stop: s.stop,
                    would_be_correct: s.would_be_correct,
                };
                if s.shadow {
                    g.shadow.push(obs);
                } else {
                    g.solutions.push(obs);
                }
            }
            _ => {}
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub recomputed: Vec<StepMetrics>,
    /// Steps whose recomputed record differs from the logged one.
    pub mismatched_steps: Vec<u64>,
    /// Logged steps with no recomputed counterpart, or the reverse.
    pub missing_steps: Vec<u64>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.mismatched_steps.is_empty() && self.missing_steps.is_empty()
    }
}

/// Recomputes every step's metrics from rollout and meta records.
pub fn recompute(records: &[LogRecord], cfg: &TrainConfig) -> Vec<StepMetrics> {
    let mut by_step: BTreeMap<u64, Vec<_>> = BTreeMap::new();
    for ((step, _, _), obs) in observations(records) {
        by_step.entry(step).or_default().push(score_group(&obs, cfg));
    }
    by_step.into_iter().map(|(step, scores)| aggregate_step(step, &scores)).collect()
}

/// Replays a log written by a run and compares against its step records as
/// they were serialized.
pub fn replay_log(records: &[LogRecord]) -> Result<ReplayReport> {
    let cfg = records
        .iter()
        .find_map(|r| match r {
            LogRecord::Header(h) => Some(h.config.train.clone()),
            _ => None,
        })
        .ok_or_else(|| MasaError::Log {
            line: 1,
            message: "log has no header record".into(),
        })?;
    let recomputed = recompute(records, &cfg);
    let logged: BTreeMap<u64, &StepMetrics> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some((s.metrics.step, &s.metrics)),
            _ => None,
        })
        .collect();
    let encode = |m: &StepMetrics| {
        encode_record(&LogRecord::Step(StepRecord {
            v: LOG_SCHEMA_VERSION,
            metrics: m.clone(),
            train: None,
        }))
    };
    let mut mismatched_steps = Vec::new();
    let mut missing_steps = Vec::new();
    for m in &recomputed {
        match logged.get(&m.step) {
            Some(l) if encode(l)? == encode(m)? => {}
            Some(_) => mismatched_steps.push(m.step),
            None => missing_steps.push(m.step),
        }
    }
    let seen: Vec<u64> = recomputed.iter().map(|m| m.step).collect();
    missing_steps.extend(logged.keys().filter(|s| !seen.contains(s)));
    missing_steps.sort_unstable();
    Ok(ReplayReport {
        recomputed,
        mismatched_steps,
        missing_steps,
    })
}

/// Reward breakdown of one logged group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAnalysis {
    pub step: u64,
    pub slot: usize,
    pub task_id: String,
    pub solution_rewards: Vec<f64>,
    pub pass_rate: f64,
    pub meta_rewards: Vec<RewardBreakdown>,
    pub parsed_metas: usize,
    pub difficulty_gap: Option<f64>,
    pub length_gap: Option<f64>,
    pub notion_score: Option<f64>,
}

/// Scores each group of an arbitrary log. Uses the header config when
/// present; otherwise defaults with the group size taken from the log.
pub fn analyze_log(records: &[LogRecord]) -> Vec<GroupAnalysis> {
    let header = records.iter().find_map(|r| match r {
        LogRecord::Header(h) => Some(h.config.train.clone()),
        _ => None,
    });
    observations(records)
        .into_values()
        .map(|obs| {
            let cfg = header.clone().unwrap_or_else(|| TrainConfig {
                group_size: obs.solutions.len().max(2),
                meta_size: obs.metas.len(),
                mode: Mode::Masa,
                ..TrainConfig::default()
            });
            let sc = score_group(&obs, &cfg);
            let n = sc.solution_rewards.len();
            GroupAnalysis {
                step: obs.step,
                slot: obs.slot,
                task_id: obs.task_id,
                pass_rate: if n == 0 { 0.0 } else { sc.solution_rewards.iter().sum::<f64>() / n as f64 },
                solution_rewards: sc.solution_rewards,
                meta_rewards: sc.meta_rewards,
                parsed_metas: sc.parsed,
                difficulty_gap: sc.difficulty_gap,
                length_gap: sc.length_gap,
                notion_score: sc.notion_score,
            }
        })
        .collect()
}

//! Per-group scoring and per-step metrics.
//!
//! Everything here is a pure function of text-level observations, so the
//! live trainer and log replay share one code path.

use serde::{Deserialize, Serialize};

use crate::control::{cutoff_threshold, gate_decision, lower_median, schedule_active, GateDecision};
use crate::optim::has_zero_variance;
use crate::rewards::{notion_score, score_meta, solution_reward, GroupTruth, RewardBreakdown};
use crate::textmeta::parse_meta_output;
use crate::types::{Mode, StopReason, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaObs {
    pub text: String,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionObs {
    pub text: String,
    pub length: usize,
    pub truncated: bool,
    pub stop: StopReason,
    pub would_be_correct: Option<bool>,
}

/// Everything observed for one task in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupObservation {
    pub step: u64,
    pub slot: usize,
    pub task_id: String,
    pub problem: String,
    pub ground_truth: String,
    pub true_notions: Vec<String>,
    pub metas: Vec<MetaObs>,
    pub solutions: Vec<SolutionObs>,
    /// Counterfactual rollouts of a gated task; never trained on.
    pub shadow: Vec<SolutionObs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confusion {
    Tp,
    Fp,
    Fn,
    Tn,
}

fn confusion(predicted: bool, truth: bool) -> Confusion {
    match (predicted, truth) {
        (true, true) => Confusion::Tp,
        (true, false) => Confusion::Fp,
        (false, true) => Confusion::Fn,
        (false, false) => Confusion::Tn,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub efficient: bool,
    pub gate: Option<GateDecision>,
    pub gated: bool,
    pub cutoff: Option<u32>,
    pub solution_rewards: Vec<f64>,
    pub meta_rewards: Vec<RewardBreakdown>,
    pub metas: usize,
    pub parsed: usize,
    pub d_pred_mean: Option<f64>,
    pub difficulty_gap: Option<f64>,
    pub length_gap: Option<f64>,
    pub notion_score: Option<f64>,
    pub zero_variance: Option<bool>,
    pub gate_outcome: Option<Confusion>,
    pub cutoff_counts: [usize; 3],
    pub truncated: usize,
    pub meta_tokens: usize,
    pub solution_tokens: usize,
}

fn rewards_of(solutions: &[SolutionObs], ground_truth: &str) -> Vec<f64> {
    solutions
        .iter()
        .map(|s| if s.truncated { 0.0 } else { solution_reward(&s.text, ground_truth) })
        .collect()
}

/// Whether the efficient pipeline governs `step` under `cfg`.
pub fn efficient_at(cfg: &TrainConfig, step: u64) -> bool {
    cfg.mode == Mode::MasaEfficient && schedule_active(step, cfg.efficient_start)
}

pub fn score_group(obs: &GroupObservation, cfg: &TrainConfig) -> GroupScores {
    let max = cfg.max_response_tokens;
    let metas: Vec<_> = obs.metas.iter().map(|m| parse_meta_output(&m.text, max)).collect();
    let efficient = efficient_at(cfg, obs.step);
    let gate = efficient.then(|| gate_decision(&metas, cfg.group_size, cfg.gate_std_threshold));
    let gated = gate.is_some_and(|g| !g.keep);
    let cutoff = efficient.then(|| cutoff_threshold(&metas, cfg.cutoff_multiplier, max));

    let solution_rewards = rewards_of(&obs.solutions, &obs.ground_truth);
    let records: Vec<_> = metas.iter().filter(|m| m.parse_ok).filter_map(|m| m.parsed.as_ref()).collect();
    let parsed = records.len();
    let d_pred_mean = (parsed > 0).then(|| records.iter().map(|r| r.pass_fraction()).sum::<f64>() / parsed as f64);
    let l_pred = lower_median(&records.iter().map(|r| r.solution_length).collect::<Vec<_>>());

    let mut scores = GroupScores {
        efficient,
        gate,
        gated,
        cutoff,
        solution_rewards: solution_rewards.clone(),
        meta_rewards: Vec::new(),
        metas: obs.metas.len(),
        parsed,
        d_pred_mean,
        difficulty_gap: None,
        length_gap: None,
        notion_score: None,
        zero_variance: None,
        gate_outcome: None,
        cutoff_counts: [0; 3],
        truncated: obs.solutions.iter().filter(|s| s.truncated).count(),
        meta_tokens: obs.metas.iter().map(|m| m.tokens).sum(),
        solution_tokens: obs.solutions.iter().map(|s| s.length).sum(),
    };

    if !obs.solutions.is_empty() {
        let texts: Vec<&str> = obs.solutions.iter().map(|s| s.text.as_str()).collect();
        let lengths: Vec<usize> = obs.solutions.iter().map(|s| s.length).collect();
        let truth = GroupTruth::new(&obs.problem, &texts, &lengths, &solution_rewards);
        scores.meta_rewards = metas.iter().map(|m| score_meta(m, &truth, cfg.difficulty_base)).collect();
        scores.difficulty_gap = d_pred_mean.map(|d| (d - truth.pass_fraction).abs());
        if let (Some(p), Some(c)) = (l_pred, lower_median(&truth.correct_lengths)) {
            scores.length_gap = Some((f64::from(p) - c as f64).abs());
        }
        if !truth.correct_lengths.is_empty() && !obs.true_notions.is_empty() {
            let values: Vec<f64> = obs
                .true_notions
                .iter()
                .filter_map(|n| notion_score(n, &truth.solutions).ok())
                .collect();
            if !values.is_empty() {
                scores.notion_score = Some(values.iter().sum::<f64>() / values.len() as f64);
            }
        }
        scores.zero_variance = Some(has_zero_variance(&solution_rewards));
    } else if !obs.shadow.is_empty() {
        scores.zero_variance = Some(has_zero_variance(&rewards_of(&obs.shadow, &obs.ground_truth)));
    }

    if efficient {
        scores.gate_outcome = scores.zero_variance.map(|zv| confusion(gated, zv));
        if !gated && cutoff.is_some_and(|c| c < max) {
            for (s, &r) in obs.solutions.iter().zip(&solution_rewards) {
                let cut = s.stop == StopReason::Cutoff;
                let wrong = if cut { s.would_be_correct.map(|c| !c) } else { Some(r == 0.0) };
                match (cut, wrong) {
                    (true, Some(true)) => scores.cutoff_counts[0] += 1,
                    (true, Some(false)) => scores.cutoff_counts[1] += 1,
                    (false, Some(true)) => scores.cutoff_counts[2] += 1,
                    _ => {}
                }
            }
        }
    }
    scores
}

/// `tp / (tp + fp)`; undefined with no predicted positives.
pub fn precision(tp: usize, fp: usize) -> Option<f64> {
    (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64)
}

pub fn recall(tp: usize, fn_: usize) -> Option<f64> {
    (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64)
}

/// Harmonic mean of precision and recall; undefined if either is.
pub fn f1(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Trailing moving average over defined values; the window is truncated at
/// the start of the series and undefined entries are skipped.
pub fn moving_average(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let w = window.max(1);
    (0..series.len())
        .map(|i| mean_defined(&series[(i + 1).saturating_sub(w)..=i]))
        .collect()
}

/// Mean of the defined values, if any.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Metrics of one training step. Undefined values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub tasks: usize,
    pub gated: usize,
    pub tokens_generated: usize,
    pub solution_tokens: usize,
    pub meta_tokens: usize,
    pub pass_rate: Option<f64>,
    pub zero_variance_groups: usize,
    pub truncated: usize,
    pub meta_reward: Option<f64>,
    pub length_reward: Option<f64>,
    pub difficulty_reward: Option<f64>,
    pub notion_reward: Option<f64>,
    pub parse_rate: Option<f64>,
    pub difficulty_gap: Option<f64>,
    pub length_gap: Option<f64>,
    pub notion_score: Option<f64>,
    pub gating_proportion: Option<f64>,
    pub gate_tp: usize,
    pub gate_fp: usize,
    pub gate_fn: usize,
    pub gate_tn: usize,
    pub gate_precision: Option<f64>,
    pub gate_recall: Option<f64>,
    pub gate_f1: Option<f64>,
    pub cutoff_tp: usize,
    pub cutoff_fp: usize,
    pub cutoff_fn: usize,
    pub cutoff_precision: Option<f64>,
    pub cutoff_recall: Option<f64>,
    pub cutoff_f1: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates the groups of one step, in slot order.
pub fn aggregate_step(step: u64, scores: &[GroupScores]) -> StepMetrics {
    let metas: Vec<&RewardBreakdown> = scores.iter().flat_map(|s| &s.meta_rewards).collect();
    let total_metas: usize = scores.iter().map(|s| s.metas).sum();
    let count = |c: Confusion| scores.iter().filter(|s| s.gate_outcome == Some(c)).count();
    let (gate_tp, gate_fp, gate_fn, gate_tn) = (
        count(Confusion::Tp),
        count(Confusion::Fp),
        count(Confusion::Fn),
        count(Confusion::Tn),
    );
    let cut = |i: usize| scores.iter().map(|s| s.cutoff_counts[i]).sum::<usize>();
    let (cutoff_tp, cutoff_fp, cutoff_fn) = (cut(0), cut(1), cut(2));
    let gate_precision = precision(gate_tp, gate_fp);
    let gate_recall = recall(gate_tp, gate_fn);
    let cutoff_precision = precision(cutoff_tp, cutoff_fp);
    let cutoff_recall = recall(cutoff_tp, cutoff_fn);
    let gated = scores.iter().filter(|s| s.gated).count();
    let efficient = scores.iter().any(|s| s.efficient);
    let meta_tokens: usize = scores.iter().map(|s| s.meta_tokens).sum();
    let solution_tokens: usize = scores.iter().map(|s| s.solution_tokens).sum();
    let parsed: usize = scores.iter().map(|s| s.parsed).sum();
    StepMetrics {
        step,
        tasks: scores.len(),
        gated,
        tokens_generated: meta_tokens + solution_tokens,
        solution_tokens,
        meta_tokens,
        pass_rate: mean(scores.iter().flat_map(|s| s.solution_rewards.iter().copied())),
        zero_variance_groups: scores
            .iter()
            .filter(|s| !s.solution_rewards.is_empty() && s.zero_variance == Some(true))
            .count(),
        truncated: scores.iter().map(|s| s.truncated).sum(),
        meta_reward: mean(metas.iter().map(|r| r.r_meta)),
        length_reward: mean(metas.iter().map(|r| r.r_length)),
        difficulty_reward: mean(metas.iter().map(|r| r.r_difficulty)),
        notion_reward: mean(metas.iter().map(|r| r.r_notion)),
        parse_rate: (total_metas > 0).then(|| parsed as f64 / total_metas as f64),
        difficulty_gap: mean(scores.iter().filter_map(|s| s.difficulty_gap)),
        length_gap: mean(scores.iter().filter_map(|s| s.length_gap)),
        notion_score: mean(scores.iter().filter_map(|s| s.notion_score)),
        gating_proportion: (efficient && !scores.is_empty()).then(|| gated as f64 / scores.len() as f64),
        gate_tp,
        gate_fp,
        gate_fn,
        gate_tn,
        gate_precision,
        gate_recall,
        gate_f1: f1(gate_precision, gate_recall),
        cutoff_tp,
        cutoff_fp,
        cutoff_fn,
        cutoff_precision,
        cutoff_recall,
        cutoff_f1: f1(cutoff_precision, cutoff_recall),
    }
}

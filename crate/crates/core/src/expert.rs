//! Expert meta trajectories with true group statistics substituted, and the
//! buffer that feeds behavior cloning.

use serde::{Deserialize, Serialize};

use crate::control::lower_median;
use crate::error::Result;
use crate::rewards::RewardBreakdown;
use crate::textmeta::render_meta_text;
use crate::types::{MetaPrediction, MetaRecord, MIN_PREDICTED_LENGTH, PASS_RATE_SCALE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTrajectory {
    pub task_id: String,
    /// The meta prompt the target continues.
    pub prompt: String,
    pub tokens: Vec<u32>,
    pub text: String,
    pub record: MetaRecord,
    pub source_step: u64,
    pub notion_reward: f64,
}

/// True statistics of a solution group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueStats {
    pub pass_rate: u32,
    pub solution_length: u32,
}

/// `pass_rate = round(8 * correct / G)`; `solution_length` is the lower
/// median length of correct rollouts, or of all rollouts when none is
/// correct, clamped into the predictable range.
pub fn true_stats(lengths: &[usize], rewards: &[f64], max_response_tokens: u32) -> Option<TrueStats> {
    if lengths.is_empty() || lengths.len() != rewards.len() {
        return None;
    }
    let correct: Vec<usize> = lengths
        .iter()
        .zip(rewards)
        .filter(|(_, &r)| r == 1.0)
        .map(|(&l, _)| l)
        .collect();
    let pass = (f64::from(PASS_RATE_SCALE) * correct.len() as f64 / lengths.len() as f64).round() as u32;
    let median = if correct.is_empty() {
        lower_median(lengths)?
    } else {
        lower_median(&correct)?
    };
    let length = (median as u64).clamp(u64::from(MIN_PREDICTED_LENGTH), u64::from(max_response_tokens)) as u32;
    Some(TrueStats {
        pass_rate: pass,
        solution_length: length,
    })
}

/// Picks the parsed meta rollout with the highest notion reward (first on
/// ties, and at least `min_notion_reward`) and substitutes the true group
/// statistics. `encode` tokenizes the corrected record.
#[allow(clippy::too_many_arguments)]
pub fn extract_expert(
    task_id: &str,
    meta_prompt: &str,
    metas: &[MetaPrediction],
    meta_rewards: &[RewardBreakdown],
    solution_lengths: &[usize],
    solution_rewards: &[f64],
    step: u64,
    min_notion_reward: f64,
    max_response_tokens: u32,
    encode: impl Fn(&MetaRecord) -> Result<Vec<u32>>,
) -> Result<Option<ExpertTrajectory>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (m, r)) in metas.iter().zip(meta_rewards).enumerate() {
        if !m.parse_ok || m.parsed.is_none() {
            continue;
        }
        if best.is_none_or(|(_, b)| r.r_notion > b) {
            best = Some((i, r.r_notion));
        }
    }
    let Some((index, notion_reward)) = best else {
        return Ok(None);
    };
    if notion_reward < min_notion_reward {
        return Ok(None);
    }
    let Some(stats) = true_stats(solution_lengths, solution_rewards, max_response_tokens) else {
        return Ok(None);
    };
    let source = &metas[index];
    let record = MetaRecord {
        math_notion: source.parsed.as_ref().expect("checked above").math_notion.clone(),
        pass_rate: stats.pass_rate,
        solution_length: stats.solution_length,
    };
    let tokens = encode(&record)?;
    Ok(Some(ExpertTrajectory {
        task_id: task_id.to_string(),
        prompt: meta_prompt.to_string(),
        tokens,
        text: render_meta_text(&source.reasoning_text, &record),
        record,
        source_step: step,
        notion_reward,
    }))
}

/// Expert dataset with DAgger-style freshness eviction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpertBuffer {
    pub items: Vec<ExpertTrajectory>,
    /// Step of the most recent flush (0 before any).
    pub last_flush_step: u64,
}

impl ExpertBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, traj: ExpertTrajectory) {
        self.items.push(traj);
    }

    /// Removes trajectories whose source step is older than
    /// `current_step - window`. With no window, the horizon is the last flush.
    pub fn evict_stale(&mut self, current_step: u64, window: Option<u64>) -> usize {
        let horizon = match window {
            Some(w) => current_step.saturating_sub(w),
            None => self.last_flush_step,
        };
        let before = self.items.len();
        self.items.retain(|t| t.source_step >= horizon);
        before - self.items.len()
    }

    pub fn is_full(&self, capacity: usize) -> bool {
        self.items.len() >= capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Empties the buffer, returning its contents.
    pub fn flush(&mut self, step: u64) -> Vec<ExpertTrajectory> {
        self.last_flush_step = step;
        std::mem::take(&mut self.items)
    }
}

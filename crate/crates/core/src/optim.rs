//! Group-relative advantages, the clipped surrogate loss, dynamic sampling,
//! and the behavior-cloning objective, all with exact gradients for the
//! simulated policy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MasaError, Result};
use crate::expert::ExpertTrajectory;
use crate::policy::{PolicyParams, SequenceKind, SimPolicy};
use crate::types::GroupSample;

/// Normalized advantages `(r - mean) / std` with population std. A group
/// whose rewards are all equal gets all-zero advantages.
pub fn compute_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len();
    if n == 0 || rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; n];
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; n];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// True when every reward in the group is identical.
pub fn has_zero_variance(rewards: &[f64]) -> bool {
    rewards.windows(2).all(|w| w[0] == w[1])
}

/// Fills in both advantage lists of a group.
pub fn attach_advantages(group: &mut GroupSample) {
    group.solution_advantages = Some(compute_advantages(&group.solution_rewards));
    group.meta_advantages = Some(compute_advantages(&group.meta_rewards));
}

/// Drops groups whose solution rewards have zero variance.
pub fn dynamic_sample_filter<T>(groups: Vec<T>, solution_rewards: impl Fn(&T) -> &[f64]) -> Vec<T> {
    groups
        .into_iter()
        .filter(|g| !has_zero_variance(solution_rewards(g)))
        .collect()
}

/// One rollout as seen by the surrogate loss.
#[derive(Debug, Clone, Copy)]
pub struct TrainRollout<'a> {
    pub kind: SequenceKind,
    pub prompt: &'a str,
    pub tokens: &'a [u32],
    /// Per-token log-probabilities at sampling time.
    pub old_logprobs: Option<&'a [f64]>,
    pub advantage: f64,
}

/// The rollouts of one group and the group's weight in the batch mean.
#[derive(Debug, Clone)]
pub struct TrainGroup<'a> {
    pub rollouts: Vec<TrainRollout<'a>>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Importance ratios, one list per rollout in batch order.
    pub ratios: Vec<Vec<f64>>,
    pub clip_fraction: f64,
}

struct GroupPart {
    objective: f64,
    grad: Vec<f64>,
    ratios: Vec<Vec<f64>>,
    clipped: usize,
    tokens: usize,
}

fn group_part(
    sim: &SimPolicy,
    group: &TrainGroup<'_>,
    params: &PolicyParams,
    scale: f64,
    eps_low: f64,
    eps_high: f64,
    first_index: usize,
) -> Result<GroupPart> {
    let theta = &params.theta;
    let mut part = GroupPart {
        objective: 0.0,
        grad: vec![0.0; theta.len()],
        ratios: Vec::with_capacity(group.rollouts.len()),
        clipped: 0,
        tokens: 0,
    };
    let per_rollout = scale * group.weight / group.rollouts.len().max(1) as f64;
    for (i, r) in group.rollouts.iter().enumerate() {
        let old = r
            .old_logprobs
            .filter(|o| o.len() == r.tokens.len())
            .ok_or(MasaError::MissingOldLogprobs(first_index + i))?;
        let scored = sim.decisions(r.kind, r.prompt, r.tokens)?;
        let mut new = vec![0.0; r.tokens.len()];
        for (pos, d) in &scored.decisions {
            new[*pos] = d.log_prob(theta);
        }
        let len = r.tokens.len().max(1) as f64;
        let w = per_rollout / len;
        let a = r.advantage;
        let ratios: Vec<f64> = new.iter().zip(old).map(|(n, o)| (n - o).exp()).collect();
        let mut active = vec![false; ratios.len()];
        for (t, &g) in ratios.iter().enumerate() {
            let clipped = g.clamp(1.0 - eps_low, 1.0 + eps_high);
            part.objective += w * (g * a).min(clipped * a);
            active[t] = (a > 0.0 && g > 1.0 + eps_high) || (a < 0.0 && g < 1.0 - eps_low);
        }
        part.clipped += active.iter().filter(|&&c| c).count();
        part.tokens += ratios.len();
        if a != 0.0 {
            for (pos, d) in &scored.decisions {
                if !active[*pos] {
                    d.accumulate_grad(theta, -w * a * ratios[*pos], &mut part.grad);
                }
            }
        }
        part.ratios.push(ratios);
    }
    Ok(part)
}

/// The negated clipped surrogate: token mean per rollout, rollout mean per
/// group, weighted group mean over the batch. No KL term.
pub fn grpo_loss_and_grad(
    sim: &SimPolicy,
    groups: &[TrainGroup<'_>],
    params: &PolicyParams,
    eps_low: f64,
    eps_high: f64,
) -> Result<LossReport> {
    if params.theta.len() != sim.layout().len() {
        return Err(MasaError::Shape {
            expected: sim.layout().len(),
            got: params.theta.len(),
        });
    }
    let mut firsts = Vec::with_capacity(groups.len());
    let mut acc = 0;
    for g in groups {
        firsts.push(acc);
        acc += g.rollouts.len();
    }
    let scale = 1.0 / groups.len().max(1) as f64;
    let parts: Vec<GroupPart> = groups
        .par_iter()
        .zip(firsts.par_iter())
        .map(|(g, &first)| group_part(sim, g, params, scale, eps_low, eps_high, first))
        .collect::<Result<_>>()?;
    let mut report = LossReport {
        loss: 0.0,
        grad: vec![0.0; params.theta.len()],
        ratios: Vec::with_capacity(acc),
        clip_fraction: 0.0,
    };
    let (mut clipped, mut tokens) = (0, 0);
    let mut objective = 0.0;
    for p in parts {
        objective += p.objective;
        for (a, b) in report.grad.iter_mut().zip(&p.grad) {
            *a += b;
        }
        report.ratios.extend(p.ratios);
        clipped += p.clipped;
        tokens += p.tokens;
    }
    report.loss = -objective;
    report.clip_fraction = if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 };
    Ok(report)
}

/// Mean negative log-likelihood of the expert sequences.
pub fn bc_loss_and_grad(sim: &SimPolicy, buffer: &[ExpertTrajectory], params: &PolicyParams) -> Result<LossReport> {
    if buffer.is_empty() {
        return Err(MasaError::EmptyBuffer);
    }
    let w = 1.0 / buffer.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = buffer
        .par_iter()
        .map(|traj| {
            let scored = sim.meta_decisions(&traj.prompt, &traj.tokens)?;
            let mut grad = vec![0.0; params.theta.len()];
            let mut nll = 0.0;
            for (_, d) in &scored.decisions {
                nll -= d.accumulate_grad(&params.theta, -w, &mut grad);
            }
            Ok((nll, grad))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; params.theta.len()];
    let mut loss = 0.0;
    for (nll, g) in parts {
        loss += w * nll;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(LossReport {
        loss,
        grad,
        ratios: Vec::new(),
        clip_fraction: 0.0,
    })
}

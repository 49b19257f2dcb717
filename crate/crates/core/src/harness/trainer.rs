//! The meta-aware training loop.
//!
//! Each step: sample meta rollouts; once the efficient schedule is active,
//! gate each task, build hints, and sample solutions under the early cutoff,
//! otherwise sample solutions in parallel with the metas; score; take the RL
//! update; extract expert trajectories and run behavior cloning whenever the
//! expert buffer fills.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{aggregate_step, efficient_at, score_group, GroupObservation, GroupScores, MetaObs, SolutionObs, StepMetrics};
use super::{stream, Purpose};
use crate::control::{build_hints, cutoff_threshold, gate_decision};
use crate::error::{MasaError, Result};
use crate::expert::{extract_expert, ExpertBuffer, ExpertTrajectory};
use crate::optim::{bc_loss_and_grad, compute_advantages, grpo_loss_and_grad, has_zero_variance, TrainGroup, TrainRollout};
use crate::policy::{Optimizer, Policy, PolicyParams, SequenceKind, SimAgent, SimPolicy};
use crate::textmeta::{render_meta_prompt, render_solution_prompt};
use crate::types::{
    validate_group, Algorithm, GroupSample, MetaPrediction, SolutionRollout, Task, TrainConfig, UpdateSchedule,
};

/// Mutable training state; everything a checkpoint needs to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: PolicyParams,
    /// Last completed step.
    pub step: u64,
    pub buffer: ExpertBuffer,
    pub rl_opt: Optimizer,
    pub bc_opt: Optimizer,
    pub tasks_seen: u64,
    pub tokens_generated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcFlush {
    pub step: u64,
    pub size: usize,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Optimizer-side diagnostics of a step. Unlike [`StepMetrics`] these depend
/// on parameters and are not recomputed by replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTelemetry {
    pub skipped: bool,
    pub rl_groups: usize,
    pub loss: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub grad_norm: Option<f64>,
    pub experts_pushed: usize,
    pub buffer_len: usize,
    pub bc: Vec<BcFlush>,
}

/// One task's sampled data within a step.
#[derive(Debug, Clone)]
pub struct SlotSample {
    pub task_index: usize,
    pub meta_prompt: String,
    pub metas: Vec<MetaPrediction>,
    pub solution_prompt: String,
    pub solutions: Vec<SolutionRollout>,
    pub shadow: Vec<SolutionRollout>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub observations: Vec<GroupObservation>,
    pub scores: Vec<GroupScores>,
    /// Advantages per slot, present for groups that entered the RL batch.
    pub solution_advantages: Vec<Option<Vec<f64>>>,
    pub meta_advantages: Vec<Option<Vec<f64>>>,
    pub metrics: StepMetrics,
    pub telemetry: TrainTelemetry,
    pub experts: Vec<ExpertTrajectory>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub sim: SimPolicy,
    pub tasks: Vec<Task>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, sim: SimPolicy, tasks: Vec<Task>) -> Result<Self> {
        cfg.validate()?;
        if tasks.len() < cfg.batch_tasks {
            return Err(MasaError::Config(format!(
                "batch_tasks {} exceeds the {} available tasks",
                cfg.batch_tasks,
                tasks.len()
            )));
        }
        if sim.max_response_tokens() != cfg.max_response_tokens {
            return Err(MasaError::Config("simulator and config disagree on max_response_tokens".into()));
        }
        let params = sim.init_params();
        let n = params.len();
        let state = TrainState {
            params,
            step: 0,
            buffer: ExpertBuffer::new(),
            rl_opt: Optimizer::from_config(&cfg, n),
            bc_opt: Optimizer::from_config(&cfg, n),
            tasks_seen: 0,
            tokens_generated: 0,
        };
        Ok(Self { cfg, sim, tasks, state })
    }

    pub fn with_state(mut self, state: TrainState) -> Result<Self> {
        if state.params.layout != self.sim.layout() {
            return Err(MasaError::Config("checkpoint layout does not match the simulator".into()));
        }
        self.state = state;
        Ok(self)
    }

    fn sample_slot(&self, step: u64, slot: usize, task_index: usize) -> Result<SlotSample> {
        let cfg = &self.cfg;
        let task = &self.tasks[task_index];
        let agent = SimAgent {
            sim: &self.sim,
            params: &self.state.params,
            shadow: cfg.shadow_truth,
        };
        let seed = cfg.rng_seed;
        let meta_prompt = render_meta_prompt(task, cfg.max_response_tokens)?;
        let metas = if cfg.mode.uses_meta() && cfg.meta_size > 0 {
            let mut rng = stream(seed, step, slot as u64, Purpose::Meta);
            agent.sample_metas(task, &meta_prompt, cfg.meta_size, &mut rng)?
        } else {
            Vec::new()
        };
        let mut rng = stream(seed, step, slot as u64, Purpose::Solution);
        let budget = cfg.max_response_tokens;
        let (solution_prompt, solutions, shadow) = if efficient_at(cfg, step) {
            let gate = gate_decision(&metas, cfg.group_size, cfg.gate_std_threshold);
            let hints = build_hints(&metas, cfg.hint_cap);
            let cutoff = cutoff_threshold(&metas, cfg.cutoff_multiplier, budget);
            let prompt = render_solution_prompt(task, &hints);
            if gate.keep {
                let sols = agent.sample_solutions(task, &prompt, cfg.group_size, budget, Some(cutoff), &mut rng)?;
                (prompt, sols, Vec::new())
            } else if cfg.shadow_truth {
                let sols = agent.sample_solutions(task, &prompt, cfg.group_size, budget, Some(cutoff), &mut rng)?;
                (prompt, Vec::new(), sols)
            } else {
                (prompt, Vec::new(), Vec::new())
            }
        } else {
            let prompt = render_solution_prompt(task, &[]);
            let sols = agent.sample_solutions(task, &prompt, cfg.group_size, budget, None, &mut rng)?;
            (prompt, sols, Vec::new())
        };
        Ok(SlotSample {
            task_index,
            meta_prompt,
            metas,
            solution_prompt,
            solutions,
            shadow,
        })
    }

    fn observe(&self, step: u64, slot: usize, s: &SlotSample) -> GroupObservation {
        let task = &self.tasks[s.task_index];
        let sol = |r: &SolutionRollout| SolutionObs {
            text: r.text.clone(),
            length: r.length,
            truncated: r.truncated,
            stop: r.stop,
            would_be_correct: r.would_be_correct,
        };
        GroupObservation {
            step,
            slot,
            task_id: task.id.clone(),
            problem: task.prompt.clone(),
            ground_truth: task.ground_truth.clone(),
            true_notions: task.sim_latent.as_ref().map(|l| l.true_notions.clone()).unwrap_or_default(),
            metas: s
                .metas
                .iter()
                .map(|m| MetaObs {
                    text: m.raw_text.clone(),
                    tokens: m.tokens.len(),
                })
                .collect(),
            solutions: s.solutions.iter().map(sol).collect(),
            shadow: s.shadow.iter().map(sol).collect(),
        }
    }

    /// Task indices for `step`, sampled without replacement.
    pub fn batch_for(&self, step: u64) -> Vec<usize> {
        let mut rng = stream(self.cfg.rng_seed, step, 0, Purpose::Batch);
        sample(&mut rng, self.tasks.len(), self.cfg.batch_tasks).into_vec()
    }

    pub fn step(&mut self) -> Result<StepOutput> {
        let step = self.state.step + 1;
        let batch = self.batch_for(step);
        let samples: Vec<SlotSample> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &ti)| self.sample_slot(step, slot, ti))
            .collect::<Result<_>>()?;
        let observations: Vec<GroupObservation> =
            samples.iter().enumerate().map(|(slot, s)| self.observe(step, slot, s)).collect();
        let scores: Vec<GroupScores> = observations.par_iter().map(|o| score_group(o, &self.cfg)).collect();

        let mut solution_advantages = vec![None; samples.len()];
        let mut meta_advantages = vec![None; samples.len()];
        let mut groups: Vec<GroupSample> = Vec::new();
        let mut group_slots: Vec<usize> = Vec::new();
        let check_cfg = TrainConfig {
            meta_size: samples.first().map_or(0, |s| s.metas.len()),
            ..self.cfg.clone()
        };
        for (slot, (s, sc)) in samples.iter().zip(&scores).enumerate() {
            if sc.gated {
                continue;
            }
            let mut g = GroupSample {
                task: self.tasks[s.task_index].clone(),
                solutions: s.solutions.clone(),
                metas: s.metas.clone(),
                solution_rewards: sc.solution_rewards.clone(),
                meta_rewards: sc.meta_rewards.iter().map(|r| r.r_meta).collect(),
                solution_advantages: None,
                meta_advantages: None,
            };
            let violations = validate_group(&g, &check_cfg);
            if !violations.is_empty() {
                return Err(MasaError::Precondition(format!("group {} is invalid: {violations:?}", g.task.id)));
            }
            if self.cfg.algorithm == Algorithm::Dapo && has_zero_variance(&g.solution_rewards) {
                continue;
            }
            let sa = compute_advantages(&g.solution_rewards);
            let ma = compute_advantages(&g.meta_rewards);
            solution_advantages[slot] = Some(sa.clone());
            meta_advantages[slot] = (!ma.is_empty()).then(|| ma.clone());
            g.solution_advantages = Some(sa);
            g.meta_advantages = Some(ma);
            groups.push(g);
            group_slots.push(slot);
        }

        let mut telemetry = self.rl_update(&samples, &groups, &group_slots)?;
        let experts = self.collect_experts(step, &samples, &scores, &mut telemetry)?;
        telemetry.buffer_len = self.state.buffer.len();

        let metrics = aggregate_step(step, &scores);
        self.state.step = step;
        self.state.tasks_seen += batch.len() as u64;
        self.state.tokens_generated += metrics.tokens_generated as u64;
        Ok(StepOutput {
            observations,
            scores,
            solution_advantages,
            meta_advantages,
            metrics,
            telemetry,
            experts,
        })
    }

    fn rl_update(&mut self, samples: &[SlotSample], groups: &[GroupSample], slots: &[usize]) -> Result<TrainTelemetry> {
        let mut sol_groups: Vec<TrainGroup<'_>> = Vec::new();
        let mut meta_groups: Vec<TrainGroup<'_>> = Vec::new();
        for (g, &slot) in groups.iter().zip(slots) {
            let s = &samples[slot];
            let adv = g.solution_advantages.as_deref().expect("advantages attached");
            sol_groups.push(TrainGroup {
                rollouts: s
                    .solutions
                    .iter()
                    .zip(adv)
                    .map(|(r, &a)| TrainRollout {
                        kind: SequenceKind::Solution,
                        prompt: &s.solution_prompt,
                        tokens: &r.tokens,
                        old_logprobs: Some(&r.logprobs),
                        advantage: a,
                    })
                    .collect(),
                weight: 1.0,
            });
            if !s.metas.is_empty() {
                let adv = g.meta_advantages.as_deref().expect("advantages attached");
                meta_groups.push(TrainGroup {
                    rollouts: s
                        .metas
                        .iter()
                        .zip(adv)
                        .map(|(m, &a)| TrainRollout {
                            kind: SequenceKind::Meta,
                            prompt: &s.meta_prompt,
                            tokens: &m.tokens,
                            old_logprobs: Some(&m.logprobs),
                            advantage: a,
                        })
                        .collect(),
                    weight: self.cfg.meta_loss_weight,
                });
            }
        }
        let rl_groups = sol_groups.len() + meta_groups.len();
        let mut telemetry = TrainTelemetry {
            skipped: rl_groups == 0,
            rl_groups,
            loss: None,
            clip_fraction: None,
            grad_norm: None,
            experts_pushed: 0,
            buffer_len: 0,
            bc: Vec::new(),
        };
        if rl_groups == 0 {
            return Ok(telemetry);
        }
        let phases: Vec<Vec<TrainGroup<'_>>> = match self.cfg.update_schedule {
            UpdateSchedule::Joint => vec![sol_groups.into_iter().chain(meta_groups).collect()],
            UpdateSchedule::Alternating => vec![sol_groups, meta_groups],
        };
        for _ in 0..self.cfg.updates_per_batch {
            for phase in phases.iter().filter(|p| !p.is_empty()) {
                let report = grpo_loss_and_grad(&self.sim, phase, &self.state.params, self.cfg.eps_low, self.cfg.eps_high)?;
                let norm = self.state.rl_opt.step(&mut self.state.params, &report.grad, self.cfg.rl_lr)?;
                if telemetry.loss.is_none() {
                    telemetry.loss = Some(report.loss);
                    telemetry.clip_fraction = Some(report.clip_fraction);
                    telemetry.grad_norm = Some(norm);
                }
            }
        }
        Ok(telemetry)
    }

    fn collect_experts(
        &mut self,
        step: u64,
        samples: &[SlotSample],
        scores: &[GroupScores],
        telemetry: &mut TrainTelemetry,
    ) -> Result<Vec<ExpertTrajectory>> {
        let mut out = Vec::new();
        if !self.cfg.mode.uses_meta() {
            return Ok(out);
        }
        self.state.buffer.evict_stale(step, self.cfg.expert_window);
        for (s, sc) in samples.iter().zip(scores) {
            if sc.gated || s.metas.is_empty() || s.solutions.is_empty() {
                continue;
            }
            let lengths: Vec<usize> = s.solutions.iter().map(|r| r.length).collect();
            let expert = extract_expert(
                &self.tasks[s.task_index].id,
                &s.meta_prompt,
                &s.metas,
                &sc.meta_rewards,
                &lengths,
                &sc.solution_rewards,
                step,
                self.cfg.expert_min_notion_reward,
                self.cfg.max_response_tokens,
                |r| self.sim.encode_meta(r),
            )?;
            let Some(expert) = expert else { continue };
            out.push(expert.clone());
            self.state.buffer.push(expert);
            telemetry.experts_pushed += 1;
            if self.state.buffer.is_full(self.cfg.expert_batch) {
                telemetry.bc.push(self.behavior_clone(step)?);
            }
        }
        Ok(out)
    }

    /// Runs the scheduled BC updates on the full buffer, then empties it.
    fn behavior_clone(&mut self, step: u64) -> Result<BcFlush> {
        let items = self.state.buffer.flush(step);
        let before = bc_loss_and_grad(&self.sim, &items, &self.state.params)?.loss;
        for _ in 0..self.cfg.bc_updates_per_loop {
            let report = bc_loss_and_grad(&self.sim, &items, &self.state.params)?;
            self.state.bc_opt.step(&mut self.state.params, &report.grad, self.cfg.bc_lr)?;
        }
        let after = bc_loss_and_grad(&self.sim, &items, &self.state.params)?.loss;
        Ok(BcFlush {
            step,
            size: items.len(),
            loss_before: before,
            loss_after: after,
        })
    }
}

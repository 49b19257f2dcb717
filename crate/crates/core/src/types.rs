//! Domain types shared by every stage of the pipeline, plus group validation.

use serde::{Deserialize, Serialize};

use crate::error::{MasaError, Result};

/// Pass-rate predictions live on a 0..=8 integer scale.
pub const PASS_RATE_SCALE: u32 = 8;
/// Smallest solution length a meta prediction may claim.
pub const MIN_PREDICTED_LENGTH: u32 = 128;

/// Latent ground truth known only to the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLatent {
    /// Pass-rate ceiling p* in [0, 1]; 0 means no rollout can ever be correct.
    pub difficulty: f64,
    pub true_notions: Vec<String>,
    pub length_mean: f64,
    pub length_spread: f64,
    /// Index of the strategy that solves this task.
    pub solution_strategy: usize,
    /// Observable context bucket (topic x level) the policy conditions on.
    pub context: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub prompt: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_latent: Option<SimLatent>,
}

impl Task {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, ground_truth: impl Into<String>) -> Result<Self> {
        let task = Self {
            id: id.into(),
            prompt: prompt.into(),
            ground_truth: ground_truth.into(),
            sim_latent: None,
        };
        task.check()?;
        Ok(task)
    }

    pub fn with_latent(mut self, latent: SimLatent) -> Result<Self> {
        self.sim_latent = Some(latent);
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(MasaError::Precondition(format!("{violations:?}")))
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.prompt.trim().is_empty() {
            out.push(Violation::EmptyPrompt);
        }
        if let Some(latent) = &self.sim_latent {
            if !(0.0..=1.0).contains(&latent.difficulty) {
                out.push(Violation::LatentOutOfRange("difficulty"));
            }
            if !(latent.length_mean >= 1.0) {
                out.push(Violation::LatentOutOfRange("length_mean"));
            }
        }
        out
    }
}

/// Why generation of a sequence stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    Budget,
    Cutoff,
}

impl StopReason {
    pub fn is_truncated(self) -> bool {
        !matches!(self, StopReason::Eos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRollout {
    pub tokens: Vec<u32>,
    pub text: String,
    pub length: usize,
    pub logprobs: Vec<f64>,
    pub reward: f64,
    pub truncated: bool,
    pub stop: StopReason,
    /// Correctness the rollout would have had without truncation. Only
    /// recorded in shadow mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub would_be_correct: Option<bool>,
}

/// The three structured fields of a meta prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub math_notion: Vec<String>,
    pub pass_rate: u32,
    pub solution_length: u32,
}

impl MetaRecord {
    /// Predicted pass rate normalized to [0, 1].
    pub fn pass_fraction(&self) -> f64 {
        f64::from(self.pass_rate) / f64::from(PASS_RATE_SCALE)
    }

    pub fn in_range(&self, max_response_tokens: u32) -> bool {
        self.pass_rate <= PASS_RATE_SCALE
            && self.solution_length >= MIN_PREDICTED_LENGTH
            && self.solution_length <= max_response_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPrediction {
    pub tokens: Vec<u32>,
    #[serde(default)]
    pub logprobs: Vec<f64>,
    /// Full generated text.
    pub raw_text: String,
    /// The `<meta>...</meta>` span, empty when absent.
    pub reasoning_text: String,
    pub parsed: Option<MetaRecord>,
    pub parse_ok: bool,
}

/// One task's rollouts, rewards, and (after normalization) advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub task: Task,
    pub solutions: Vec<SolutionRollout>,
    pub metas: Vec<MetaPrediction>,
    pub solution_rewards: Vec<f64>,
    pub meta_rewards: Vec<f64>,
    #[serde(default)]
    pub solution_advantages: Option<Vec<f64>>,
    #[serde(default)]
    pub meta_advantages: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Grpo,
    Dapo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Plain GRPO/DAPO on solution rollouts only.
    Baseline,
    /// Parallel meta + solution rollouts with self-alignment rewards and expert cloning.
    Masa,
    /// Masa, switching to gate -> hint -> rollout-with-cutoff after the start step.
    MasaEfficient,
}

impl Mode {
    pub fn uses_meta(self) -> bool {
        !matches!(self, Mode::Baseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

/// How meta and solution groups share optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSchedule {
    /// One step on the concatenated batch.
    Joint,
    /// A solution-only step followed by a meta-only step.
    Alternating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// G: solution rollouts per task.
    pub group_size: usize,
    /// M: meta rollouts per task. Zero disables meta sampling entirely.
    pub meta_size: usize,
    /// b in the difficulty reward.
    pub difficulty_base: f64,
    /// k: gating/cutoff/hinting start after this step.
    pub efficient_start: u64,
    /// N_expert: buffer size that triggers behavior cloning.
    pub expert_batch: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub bc_updates_per_loop: usize,
    pub gate_std_threshold: f64,
    pub cutoff_multiplier: f64,
    pub max_response_tokens: u32,
    /// alpha: RL learning rate.
    pub rl_lr: f64,
    /// Learning rate for behavior cloning.
    pub bc_lr: f64,
    pub total_steps: u64,
    pub rng_seed: u64,
    pub algorithm: Algorithm,
    pub mode: Mode,
    /// Tasks per step.
    pub batch_tasks: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Gradient steps per batch; above 1 the importance ratio leaves 1.
    pub updates_per_batch: usize,
    pub update_schedule: UpdateSchedule,
    /// Weight on meta groups in the RL loss.
    pub meta_loss_weight: f64,
    /// Minimum notion reward for a meta rollout to become an expert target.
    pub expert_min_notion_reward: f64,
    /// Freshness window for expert eviction; `None` keeps everything since the last flush.
    pub expert_window: Option<u64>,
    pub hint_cap: usize,
    /// Complete truncated or gated rollouts off-policy to record counterfactual truth.
    pub shadow_truth: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            meta_size: 16,
            difficulty_base: 0.01,
            efficient_start: 120,
            expert_batch: 128,
            eps_low: 0.2,
            eps_high: 0.28,
            bc_updates_per_loop: 5,
            gate_std_threshold: 0.1,
            cutoff_multiplier: 2.0,
            max_response_tokens: 8192,
            rl_lr: 1e-6,
            bc_lr: 1e-6,
            total_steps: 314,
            rng_seed: 0,
            algorithm: Algorithm::Grpo,
            mode: Mode::MasaEfficient,
            batch_tasks: 128,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.1,
            grad_clip: Some(1.0),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            updates_per_batch: 1,
            update_schedule: UpdateSchedule::Joint,
            meta_loss_weight: 1.0,
            expert_min_notion_reward: 0.5,
            expert_window: None,
            hint_cap: 5,
            shadow_truth: true,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset for the simulated universe: G = M = 8, 1K budget,
    /// 300 steps of 8 tasks.
    pub fn desk() -> Self {
        Self {
            group_size: 8,
            meta_size: 8,
            max_response_tokens: 1024,
            rl_lr: 0.05,
            bc_lr: 0.05,
            total_steps: 300,
            batch_tasks: 8,
            weight_decay: 0.0,
            grad_clip: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(MasaError::Config(msg.to_string()));
        if !(self.difficulty_base > 0.0 && self.difficulty_base < 1.0) {
            return fail("difficulty_base must lie in (0, 1)");
        }
        if !(self.eps_low > 0.0 && self.eps_low <= self.eps_high) {
            return fail("clip range requires 0 < eps_low <= eps_high");
        }
        if self.group_size < 2 {
            return fail("group_size must be at least 2");
        }
        if self.meta_size == 1 {
            return fail("meta_size must be 0 (disabled) or at least 2");
        }
        if self.efficient_start > self.total_steps {
            return fail("efficient_start must not exceed total_steps");
        }
        if self.max_response_tokens < crate::types::MIN_PREDICTED_LENGTH {
            return fail("max_response_tokens must be at least 128");
        }
        if self.batch_tasks == 0 {
            return fail("batch_tasks must be positive");
        }
        if self.expert_batch == 0 {
            return fail("expert_batch must be positive");
        }
        if !(self.rl_lr >= 0.0 && self.bc_lr >= 0.0) {
            return fail("learning rates must be non-negative");
        }
        if !(self.gate_std_threshold > 0.0) || !(self.cutoff_multiplier > 0.0) {
            return fail("gate threshold and cutoff multiplier must be positive");
        }
        if self.updates_per_batch == 0 {
            return fail("updates_per_batch must be positive");
        }
        Ok(())
    }
}

/// A broken invariant found by [`validate_group`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    EmptyPrompt,
    LatentOutOfRange(&'static str),
    SolutionCount { expected: usize, got: usize },
    MetaCount { expected: usize, got: usize },
    RewardCount { which: &'static str, expected: usize, got: usize },
    LengthMismatch { rollout: usize },
    PositiveLogprob { rollout: usize },
    OverBudget { rollout: usize, length: usize },
    TruncatedWithReward { rollout: usize },
    NonBinarySolutionReward { rollout: usize },
    RewardOutOfRange { which: &'static str, index: usize },
    MetaFieldOutOfRange { meta: usize },
    ParsedMismatch { meta: usize },
    AdvantageCount { which: &'static str },
}

/// Checks every invariant a group must satisfy before it reaches the optimizer.
pub fn validate_group(group: &GroupSample, cfg: &TrainConfig) -> Vec<Violation> {
    let mut out = group.task.violations();

    if group.solutions.len() != cfg.group_size {
        out.push(Violation::SolutionCount {
            expected: cfg.group_size,
            got: group.solutions.len(),
        });
    }
    if group.metas.len() != cfg.meta_size {
        out.push(Violation::MetaCount {
            expected: cfg.meta_size,
            got: group.metas.len(),
        });
    }
    if group.solution_rewards.len() != group.solutions.len() {
        out.push(Violation::RewardCount {
            which: "solution",
            expected: group.solutions.len(),
            got: group.solution_rewards.len(),
        });
    }
    if group.meta_rewards.len() != group.metas.len() {
        out.push(Violation::RewardCount {
            which: "meta",
            expected: group.metas.len(),
            got: group.meta_rewards.len(),
        });
    }

    for (i, s) in group.solutions.iter().enumerate() {
        if s.length != s.tokens.len() || s.length != s.logprobs.len() {
            out.push(Violation::LengthMismatch { rollout: i });
        }
        if s.logprobs.iter().any(|&lp| !(lp <= 0.0)) {
            out.push(Violation::PositiveLogprob { rollout: i });
        }
        if s.length > cfg.max_response_tokens as usize {
            out.push(Violation::OverBudget {
                rollout: i,
                length: s.length,
            });
        }
        if s.reward != 0.0 && s.reward != 1.0 {
            out.push(Violation::NonBinarySolutionReward { rollout: i });
        }
        if s.truncated && s.reward != 0.0 {
            out.push(Violation::TruncatedWithReward { rollout: i });
        }
    }
    for (i, &r) in group.solution_rewards.iter().enumerate() {
        if r != 0.0 && r != 1.0 {
            out.push(Violation::RewardOutOfRange {
                which: "solution",
                index: i,
            });
        }
    }
    for (i, &r) in group.meta_rewards.iter().enumerate() {
        if !(0.0..=1.0).contains(&r) {
            out.push(Violation::RewardOutOfRange { which: "meta", index: i });
        }
    }

    for (i, m) in group.metas.iter().enumerate() {
        if m.parse_ok != m.parsed.is_some() {
            out.push(Violation::ParsedMismatch { meta: i });
        }
        if let Some(rec) = &m.parsed {
            if m.parse_ok && !rec.in_range(cfg.max_response_tokens) {
                out.push(Violation::MetaFieldOutOfRange { meta: i });
            }
        }
    }

    if let Some(adv) = &group.solution_advantages {
        if adv.len() != group.solutions.len() {
            out.push(Violation::AdvantageCount { which: "solution" });
        }
    }
    if let Some(adv) = &group.meta_advantages {
        if adv.len() != group.metas.len() {
            out.push(Violation::AdvantageCount { which: "meta" });
        }
    }
    out
}

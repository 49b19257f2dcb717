//! The reference simulated policy.
//!
//! A solution rollout is a short plan of notion tokens, one strategy token,
//! and then a derivation whose length and outcome the simulator fixes:
//!
//! ```text
//! [notion]* END  strategy  filler{n}  answer  EOS
//! ```
//!
//! The notion plan reads the per-context notion logits that the meta head
//! also uses, plus a solution-only adjustment and any hinted notions. The
//! strategy logits are the strategy bias plus one link row per planned
//! notion. A rollout is correct iff its strategy is the task's solution
//! strategy and a Bernoulli draw succeeds. The draw uses the task's
//! pass-rate ceiling when the plan names one of the task's true notions and
//! a scaled-down ceiling otherwise.
//! Derivations under a wrong strategy run longer than the task's length
//! profile, so truncation mostly hits incorrect rollouts.
//!
//! A meta rollout is a fixed reasoning preamble followed by pass-rate,
//! coarse length, fine length, and notion tokens, rendered as the
//! `<meta>...</meta>{json}` record.
//!
//! Only the plan, strategy, and meta tokens are free choices; all other
//! tokens are forced (probability 1, log-probability 0).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::decision::Decision;
use super::params::{ParamLayout, PolicyParams, LENGTH_FINE, PASS_CHOICES};
use super::world::SimWorld;
use crate::error::{MasaError, Result};
use crate::rewards::solution_reward;
use crate::textmeta::{hints_in_prompt, parse_meta_output, render_meta_text};
use crate::types::{MetaPrediction, MetaRecord, SolutionRollout, StopReason, Task, MIN_PREDICTED_LENGTH};

pub const FILLER: [&str; 8] = ["so", "then", "we", "get", "thus", "now", "next", "hence"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimPolicyConfig {
    /// Most notions in one plan or meta record.
    pub notion_cap: usize,
    /// Logit bonus on hinted notions in the solution plan.
    pub hint_bonus: f64,
    /// Forced reasoning tokens at the start of each meta rollout.
    pub meta_reasoning_tokens: usize,
    /// Derivation length multiplier range under a wrong strategy.
    pub wrong_length_factor: [f64; 2],
    /// Scales the execution success rate when the plan uses none of the
    /// task's true notions.
    pub off_notion_exec_factor: f64,
}

impl Default for SimPolicyConfig {
    fn default() -> Self {
        Self {
            notion_cap: 4,
            hint_bonus: 2.0,
            meta_reasoning_tokens: 400,
            wrong_length_factor: [1.8, 3.0],
            off_notion_exec_factor: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Solution,
    Meta,
}

/// The free decisions of a sequence, with their token positions.
#[derive(Debug, Clone)]
pub struct ScoredSequence {
    pub decisions: Vec<(usize, Decision)>,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct SimPolicy {
    world: SimWorld,
    cfg: SimPolicyConfig,
    layout: ParamLayout,
    max_response_tokens: u32,
    notion_phrases: Vec<String>,
}

/// Token id ranges, in order: notions, notion end, strategies, filler,
/// answer (right, wrong), EOS, pass rates, coarse lengths, fine lengths.
impl SimPolicy {
    pub fn new(world: SimWorld, cfg: SimPolicyConfig, max_response_tokens: u32) -> Result<Self> {
        world.validate()?;
        if max_response_tokens < MIN_PREDICTED_LENGTH {
            return Err(MasaError::Config("max_response_tokens must be at least 128".into()));
        }
        if cfg.notion_cap == 0 || cfg.notion_cap > world.notions.len() {
            return Err(MasaError::Config("notion_cap must lie in 1..=vocabulary size".into()));
        }
        let [lo, hi] = cfg.wrong_length_factor;
        if !(lo >= 1.0 && hi >= lo) {
            return Err(MasaError::Config("wrong_length_factor must satisfy 1 <= lo <= hi".into()));
        }
        if !(0.0..=1.0).contains(&cfg.off_notion_exec_factor) {
            return Err(MasaError::Config("off_notion_exec_factor must lie in [0, 1]".into()));
        }
        let layout = ParamLayout::new(
            world.contexts(),
            world.notions.len(),
            world.strategies.len(),
            max_response_tokens,
        );
        if layout.length_coarse > super::decision::MAX_WIDTH {
            return Err(MasaError::Config("max_response_tokens too large for the length head".into()));
        }
        let notion_phrases = world.notions.iter().map(|n| n.phrase.clone()).collect();
        Ok(Self {
            world,
            cfg,
            layout,
            max_response_tokens,
            notion_phrases,
        })
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn config(&self) -> &SimPolicyConfig {
        &self.cfg
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn max_response_tokens(&self) -> u32 {
        self.max_response_tokens
    }

    pub fn init_params(&self) -> PolicyParams {
        PolicyParams::zeros(self.layout)
    }

    // Token ids.

    fn v(&self) -> u32 {
        self.world.notions.len() as u32
    }
    pub fn notion_token(&self, n: usize) -> u32 {
        n as u32
    }
    pub fn notion_end_token(&self) -> u32 {
        self.v()
    }
    pub fn strategy_token(&self, s: usize) -> u32 {
        self.v() + 1 + s as u32
    }
    fn filler_base(&self) -> u32 {
        self.strategy_token(self.world.strategies.len())
    }
    pub fn filler_token(&self, index: usize) -> u32 {
        self.filler_base() + (index % FILLER.len()) as u32
    }
    pub fn answer_right_token(&self) -> u32 {
        self.filler_base() + FILLER.len() as u32
    }
    pub fn answer_wrong_token(&self) -> u32 {
        self.answer_right_token() + 1
    }
    pub fn eos_token(&self) -> u32 {
        self.answer_right_token() + 2
    }
    pub fn pass_token(&self, p: usize) -> u32 {
        self.eos_token() + 1 + p as u32
    }
    pub fn coarse_token(&self, k: usize) -> u32 {
        self.pass_token(PASS_CHOICES) + k as u32
    }
    pub fn fine_token(&self, j: usize) -> u32 {
        self.coarse_token(self.layout.length_coarse) + j as u32
    }
    pub fn vocab_size(&self) -> u32 {
        self.fine_token(LENGTH_FINE)
    }

    fn in_range(token: u32, start: u32, len: usize) -> Option<usize> {
        (token >= start && token < start + len as u32).then(|| (token - start) as usize)
    }

    /// Largest fine offset allowed after coarse bucket `k`.
    fn max_fine(&self, coarse: usize) -> usize {
        let span = (self.max_response_tokens - MIN_PREDICTED_LENGTH) as usize;
        (span - coarse * LENGTH_FINE).min(LENGTH_FINE - 1)
    }

    // Decisions.

    fn plan_decision(&self, ctx: usize, emitted: &[usize], hints: &[usize]) -> Decision {
        let l = &self.layout;
        let mut d = Decision::new(&[l.notion_row(ctx) as u32, l.plan_row(ctx) as u32], l.notion_width());
        for &n in emitted {
            d.disallow(n);
        }
        for &h in hints {
            if !emitted.contains(&h) {
                d.add_bias(h, self.cfg.hint_bonus);
            }
        }
        d
    }

    fn strategy_decision(&self, emitted: &[usize]) -> Decision {
        let l = &self.layout;
        let mut rows: Vec<u32> = vec![l.strategy_bias_row() as u32];
        rows.extend(emitted.iter().map(|&n| l.link_row(n) as u32));
        Decision::new(&rows, l.strategies)
    }

    fn pass_decision(&self, ctx: usize) -> Decision {
        Decision::new(&[self.layout.pass_row(ctx) as u32], PASS_CHOICES)
    }

    fn coarse_decision(&self, ctx: usize) -> Decision {
        Decision::new(&[self.layout.coarse_row(ctx) as u32], self.layout.length_coarse)
    }

    fn fine_decision(&self, ctx: usize, coarse: usize) -> Decision {
        let mut d = Decision::new(&[self.layout.fine_row(ctx) as u32], LENGTH_FINE);
        d.allow_up_to(self.max_fine(coarse));
        d
    }

    fn meta_notion_decision(&self, ctx: usize, emitted: &[usize]) -> Decision {
        let mut d = Decision::new(&[self.layout.notion_row(ctx) as u32], self.layout.notion_width());
        for &n in emitted {
            d.disallow(n);
        }
        d
    }

    pub fn context_of(&self, prompt: &str) -> Result<usize> {
        self.world.context_of(prompt)
    }

    fn hint_ids(&self, prompt: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for h in hints_in_prompt(prompt) {
            if let Some(id) = self.world.notion_id(h) {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids
    }

    fn check_params(&self, params: &PolicyParams) -> Result<()> {
        if params.theta.len() != self.layout.len() {
            return Err(MasaError::Shape {
                expected: self.layout.len(),
                got: params.theta.len(),
            });
        }
        Ok(())
    }

    // Sampling.

    /// Samples one solution rollout for `task` from `prompt`. Generation
    /// stops at EOS, at `budget`, or at `cutoff` when that is tighter.
    /// `shadow` records the counterfactual correctness of truncated rollouts.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_solution(
        &self,
        params: &PolicyParams,
        task: &Task,
        prompt: &str,
        budget: u32,
        cutoff: Option<u32>,
        rng: &mut ChaCha8Rng,
        shadow: bool,
    ) -> Result<SolutionRollout> {
        self.check_params(params)?;
        if budget == 0 {
            return Err(MasaError::Precondition("token budget must be positive".into()));
        }
        let latent = task
            .sim_latent
            .as_ref()
            .ok_or_else(|| MasaError::Precondition(format!("task {} has no simulator latent", task.id)))?;
        let ctx = self.context_of(prompt)?;
        let hints = self.hint_ids(prompt);
        let theta = &params.theta;

        let mut tokens = Vec::with_capacity(64);
        let mut logprobs = Vec::with_capacity(64);
        let mut emitted: Vec<usize> = Vec::new();
        loop {
            if emitted.len() == self.cfg.notion_cap {
                tokens.push(self.notion_end_token());
                logprobs.push(0.0);
                break;
            }
            let mut d = self.plan_decision(ctx, &emitted, &hints);
            let lp = d.sample(theta, rng.random::<f64>());
            let choice = d.chosen as usize;
            logprobs.push(lp);
            if choice == self.world.notions.len() {
                tokens.push(self.notion_end_token());
                break;
            }
            tokens.push(self.notion_token(choice));
            emitted.push(choice);
        }
        let mut d = self.strategy_decision(&emitted);
        logprobs.push(d.sample(theta, rng.random::<f64>()));
        let strategy = d.chosen as usize;
        tokens.push(self.strategy_token(strategy));

        let right_strategy = strategy == latent.solution_strategy;
        let spread = latent.length_spread.max(0.0);
        let base = if spread > 0.0 {
            Normal::new(latent.length_mean, spread)
                .expect("finite normal parameters")
                .sample(rng)
        } else {
            latent.length_mean
        };
        let [lo, hi] = self.cfg.wrong_length_factor;
        let factor = lo + (hi - lo) * rng.random::<f64>();
        let on_notion = latent
            .true_notions
            .iter()
            .filter_map(|n| self.world.notion_id(n))
            .any(|id| emitted.contains(&id));
        let ceiling = if on_notion {
            latent.difficulty
        } else {
            latent.difficulty * self.cfg.off_notion_exec_factor
        };
        let executes = rng.random::<f64>() < ceiling;
        let wrong_offset = rng.random_range(1..=97u32);
        let correct = right_strategy && executes;

        let target = if right_strategy { base } else { base * factor };
        let full_len = (target.round().max(0.0) as usize).max(tokens.len() + 3);
        let work = full_len - tokens.len() - 2;
        for i in 0..work {
            tokens.push(self.filler_token(i));
            logprobs.push(0.0);
        }
        tokens.push(if correct {
            self.answer_right_token()
        } else {
            self.answer_wrong_token()
        });
        tokens.push(self.eos_token());
        logprobs.resize(tokens.len(), 0.0);

        let limit = match cutoff {
            Some(c) if c < budget => c,
            _ => budget,
        } as usize;
        let stop = if tokens.len() <= limit {
            StopReason::Eos
        } else if matches!(cutoff, Some(c) if (c as usize) == limit && c < budget) {
            StopReason::Cutoff
        } else {
            StopReason::Budget
        };
        tokens.truncate(limit);
        logprobs.truncate(limit);

        let wrong_answer = wrong_answer(&task.ground_truth, wrong_offset);
        let text = self.render_solution(&tokens, &task.ground_truth, &wrong_answer);
        let reward = solution_reward(&text, &task.ground_truth);
        let truncated = stop.is_truncated();
        Ok(SolutionRollout {
            length: tokens.len(),
            tokens,
            text,
            logprobs,
            reward,
            truncated,
            stop,
            would_be_correct: (shadow && truncated).then_some(correct),
        })
    }

    /// Samples one meta rollout. The simulated policy always emits a
    /// schema-valid record.
    pub fn sample_meta(&self, params: &PolicyParams, prompt: &str, rng: &mut ChaCha8Rng) -> Result<MetaPrediction> {
        self.check_params(params)?;
        let ctx = self.context_of(prompt)?;
        let theta = &params.theta;
        let reasoning = self.cfg.meta_reasoning_tokens;
        let mut tokens: Vec<u32> = (0..reasoning).map(|i| self.filler_token(i)).collect();
        let mut logprobs = vec![0.0; reasoning];

        let mut d = self.pass_decision(ctx);
        logprobs.push(d.sample(theta, rng.random::<f64>()));
        let pass = d.chosen as usize;
        tokens.push(self.pass_token(pass));

        let mut d = self.coarse_decision(ctx);
        logprobs.push(d.sample(theta, rng.random::<f64>()));
        let coarse = d.chosen as usize;
        tokens.push(self.coarse_token(coarse));

        let mut d = self.fine_decision(ctx, coarse);
        logprobs.push(d.sample(theta, rng.random::<f64>()));
        let fine = d.chosen as usize;
        tokens.push(self.fine_token(fine));

        let mut emitted: Vec<usize> = Vec::new();
        loop {
            if emitted.len() == self.cfg.notion_cap {
                tokens.push(self.notion_end_token());
                logprobs.push(0.0);
                break;
            }
            let mut d = self.meta_notion_decision(ctx, &emitted);
            logprobs.push(d.sample(theta, rng.random::<f64>()));
            let choice = d.chosen as usize;
            if choice == self.world.notions.len() {
                tokens.push(self.notion_end_token());
                break;
            }
            tokens.push(self.notion_token(choice));
            emitted.push(choice);
        }
        tokens.push(self.eos_token());
        logprobs.push(0.0);

        let record = MetaRecord {
            math_notion: emitted.iter().map(|&n| self.notion_phrases[n].clone()).collect(),
            pass_rate: pass as u32,
            solution_length: MIN_PREDICTED_LENGTH + (coarse * LENGTH_FINE + fine) as u32,
        };
        let text = render_meta_text(&self.reasoning_text(), &record);
        let mut prediction = parse_meta_output(&text, self.max_response_tokens);
        debug_assert!(prediction.parse_ok);
        prediction.tokens = tokens;
        prediction.logprobs = logprobs;
        Ok(prediction)
    }

    /// The reasoning span every simulated meta rollout carries.
    pub fn reasoning_text(&self) -> String {
        (0..self.cfg.meta_reasoning_tokens)
            .map(|i| FILLER[i % FILLER.len()])
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Tokenizes a meta record as the simulated policy would emit it.
    pub fn encode_meta(&self, record: &MetaRecord) -> Result<Vec<u32>> {
        if !record.in_range(self.max_response_tokens) {
            return Err(MasaError::Precondition("meta record out of range".into()));
        }
        if record.math_notion.len() > self.cfg.notion_cap {
            return Err(MasaError::Precondition("too many notions for the simulated policy".into()));
        }
        let mut tokens: Vec<u32> = (0..self.cfg.meta_reasoning_tokens)
            .map(|i| self.filler_token(i))
            .collect();
        tokens.push(self.pass_token(record.pass_rate as usize));
        let offset = (record.solution_length - MIN_PREDICTED_LENGTH) as usize;
        tokens.push(self.coarse_token(offset / LENGTH_FINE));
        tokens.push(self.fine_token(offset % LENGTH_FINE));
        let mut ids: Vec<usize> = Vec::new();
        for n in &record.math_notion {
            let id = self
                .world
                .notion_id(n)
                .ok_or_else(|| MasaError::Precondition(format!("notion {n:?} outside the simulator vocabulary")))?;
            if ids.contains(&id) {
                return Err(MasaError::Precondition(format!("duplicate notion {n:?}")));
            }
            ids.push(id);
            tokens.push(self.notion_token(id));
        }
        tokens.push(self.notion_end_token());
        tokens.push(self.eos_token());
        Ok(tokens)
    }

    /// Decodes simulated meta tokens back to the rendered meta text.
    pub fn render_meta_tokens(&self, tokens: &[u32]) -> Result<String> {
        let scored = self.meta_decisions_in_context(0, tokens)?;
        let r = self.cfg.meta_reasoning_tokens;
        if scored.len != tokens.len() || tokens.len() < r + 5 {
            return Err(MasaError::Precondition("incomplete meta sequence".into()));
        }
        let pass = tokens[r] - self.pass_token(0);
        let coarse = (tokens[r + 1] - self.coarse_token(0)) as usize;
        let fine = (tokens[r + 2] - self.fine_token(0)) as usize;
        let notions = tokens[r + 3..]
            .iter()
            .take_while(|&&t| t < self.notion_end_token())
            .map(|&t| self.notion_phrases[t as usize].clone())
            .collect();
        let record = MetaRecord {
            math_notion: notions,
            pass_rate: pass,
            solution_length: MIN_PREDICTED_LENGTH + (coarse * LENGTH_FINE + fine) as u32,
        };
        Ok(render_meta_text(&self.reasoning_text(), &record))
    }

    fn render_solution(&self, tokens: &[u32], right: &str, wrong: &str) -> String {
        let mut text = String::with_capacity(tokens.len() * 5);
        let mut push = |piece: &str| {
            if piece.is_empty() {
                return;
            }
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(piece);
        };
        let v = self.world.notions.len();
        for &t in tokens {
            let t = t as usize;
            if t < v {
                push(&format!("using {},", self.notion_phrases[t]));
            } else if t == v {
                continue;
            } else if let Some(s) = Self::in_range(t as u32, self.strategy_token(0), self.world.strategies.len()) {
                push(&format!("approach: {}.", self.world.strategies[s]));
            } else if let Some(f) = Self::in_range(t as u32, self.filler_base(), FILLER.len()) {
                push(FILLER[f]);
            } else if t as u32 == self.answer_right_token() {
                push(&format!("final answer: \\boxed{{{right}}}"));
            } else if t as u32 == self.answer_wrong_token() {
                push(&format!("final answer: \\boxed{{{wrong}}}"));
            }
        }
        text
    }

    // Re-scoring.

    pub fn decisions(&self, kind: SequenceKind, prompt: &str, tokens: &[u32]) -> Result<ScoredSequence> {
        match kind {
            SequenceKind::Solution => self.solution_decisions(prompt, tokens),
            SequenceKind::Meta => self.meta_decisions(prompt, tokens),
        }
    }

    /// Rebuilds the free decisions of a (possibly truncated) solution sequence.
    pub fn solution_decisions(&self, prompt: &str, tokens: &[u32]) -> Result<ScoredSequence> {
        let ctx = self.context_of(prompt)?;
        let hints = self.hint_ids(prompt);
        let v = self.world.notions.len();
        let bad = |position: usize, reason: &'static str| MasaError::InvalidToken {
            token: tokens[position],
            position,
            reason,
        };
        let mut decisions = Vec::new();
        let mut emitted: Vec<usize> = Vec::new();
        let mut pos = 0;

        // Plan.
        while pos < tokens.len() {
            let t = tokens[pos] as usize;
            if emitted.len() == self.cfg.notion_cap {
                if t != v {
                    return Err(bad(pos, "plan is full; expected end of plan"));
                }
                pos += 1;
                break;
            }
            if t > v {
                return Err(bad(pos, "expected a notion or end of plan"));
            }
            let d = self.plan_decision(ctx, &emitted, &hints);
            if !d.is_allowed(t) {
                return Err(bad(pos, "notion repeated in plan"));
            }
            decisions.push((pos, d.with_choice(t)));
            pos += 1;
            if t == v {
                break;
            }
            emitted.push(t);
        }
        // Strategy.
        if pos < tokens.len() {
            let s = Self::in_range(tokens[pos], self.strategy_token(0), self.world.strategies.len())
                .ok_or_else(|| bad(pos, "expected a strategy"))?;
            decisions.push((pos, self.strategy_decision(&emitted).with_choice(s)));
            pos += 1;
        }
        // Forced derivation.
        let mut i = 0;
        while pos < tokens.len() && Self::in_range(tokens[pos], self.filler_base(), FILLER.len()).is_some() {
            if tokens[pos] != self.filler_token(i) {
                return Err(bad(pos, "derivation token out of sequence"));
            }
            i += 1;
            pos += 1;
        }
        if pos < tokens.len() {
            let t = tokens[pos];
            if t != self.answer_right_token() && t != self.answer_wrong_token() {
                return Err(bad(pos, "expected an answer"));
            }
            pos += 1;
        }
        if pos < tokens.len() {
            if tokens[pos] != self.eos_token() {
                return Err(bad(pos, "expected end of sequence"));
            }
            pos += 1;
        }
        if pos < tokens.len() {
            return Err(bad(pos, "tokens after end of sequence"));
        }
        Ok(ScoredSequence {
            decisions,
            len: tokens.len(),
        })
    }

    pub fn meta_decisions(&self, prompt: &str, tokens: &[u32]) -> Result<ScoredSequence> {
        let ctx = self.context_of(prompt)?;
        self.meta_decisions_in_context(ctx, tokens)
    }

    fn meta_decisions_in_context(&self, ctx: usize, tokens: &[u32]) -> Result<ScoredSequence> {
        let v = self.world.notions.len();
        let bad = |position: usize, reason: &'static str| MasaError::InvalidToken {
            token: tokens[position],
            position,
            reason,
        };
        let mut decisions = Vec::new();
        let mut pos = 0;
        while pos < tokens.len() && pos < self.cfg.meta_reasoning_tokens {
            if tokens[pos] != self.filler_token(pos) {
                return Err(bad(pos, "reasoning token out of sequence"));
            }
            pos += 1;
        }
        let mut coarse = None;
        if pos < tokens.len() {
            let p = Self::in_range(tokens[pos], self.pass_token(0), PASS_CHOICES)
                .ok_or_else(|| bad(pos, "expected a pass-rate token"))?;
            decisions.push((pos, self.pass_decision(ctx).with_choice(p)));
            pos += 1;
        }
        if pos < tokens.len() {
            let k = Self::in_range(tokens[pos], self.coarse_token(0), self.layout.length_coarse)
                .ok_or_else(|| bad(pos, "expected a coarse length token"))?;
            decisions.push((pos, self.coarse_decision(ctx).with_choice(k)));
            coarse = Some(k);
            pos += 1;
        }
        if let (true, Some(k)) = (pos < tokens.len(), coarse) {
            let j = Self::in_range(tokens[pos], self.fine_token(0), LENGTH_FINE)
                .ok_or_else(|| bad(pos, "expected a fine length token"))?;
            let d = self.fine_decision(ctx, k);
            if !d.is_allowed(j) {
                return Err(bad(pos, "length exceeds the response budget"));
            }
            decisions.push((pos, d.with_choice(j)));
            pos += 1;
        }
        let mut emitted: Vec<usize> = Vec::new();
        let mut closed = false;
        while pos < tokens.len() && !closed {
            let t = tokens[pos] as usize;
            if emitted.len() == self.cfg.notion_cap {
                if t != v {
                    return Err(bad(pos, "notion list is full; expected end of list"));
                }
                pos += 1;
                break;
            }
            if t > v {
                return Err(bad(pos, "expected a notion or end of list"));
            }
            let d = self.meta_notion_decision(ctx, &emitted);
            if !d.is_allowed(t) {
                return Err(bad(pos, "notion repeated"));
            }
            decisions.push((pos, d.with_choice(t)));
            pos += 1;
            if t == v {
                closed = true;
            } else {
                emitted.push(t);
            }
        }
        if pos < tokens.len() {
            if tokens[pos] != self.eos_token() {
                return Err(bad(pos, "expected end of sequence"));
            }
            pos += 1;
        }
        if pos < tokens.len() {
            return Err(bad(pos, "tokens after end of sequence"));
        }
        Ok(ScoredSequence {
            decisions,
            len: tokens.len(),
        })
    }

    /// Exact per-token log-probabilities under `params`; forced tokens score 0.
    pub fn sequence_logprobs(
        &self,
        kind: SequenceKind,
        prompt: &str,
        tokens: &[u32],
        params: &PolicyParams,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if let Some((i, &t)) = tokens.iter().enumerate().find(|(_, &t)| t >= self.vocab_size()) {
            return Err(MasaError::InvalidToken {
                token: t,
                position: i,
                reason: "out of vocabulary",
            });
        }
        let scored = self.decisions(kind, prompt, tokens)?;
        let mut out = vec![0.0; tokens.len()];
        for (pos, d) in &scored.decisions {
            out[*pos] = d.log_prob(&params.theta);
        }
        Ok(out)
    }

    /// Gradient of the total sequence log-probability.
    pub fn sequence_logprob_grad(
        &self,
        kind: SequenceKind,
        prompt: &str,
        tokens: &[u32],
        params: &PolicyParams,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let scored = self.decisions(kind, prompt, tokens)?;
        let mut grad = vec![0.0; params.theta.len()];
        for (_, d) in &scored.decisions {
            d.accumulate_grad(&params.theta, 1.0, &mut grad);
        }
        Ok(grad)
    }
}

fn wrong_answer(ground_truth: &str, offset: u32) -> String {
    match ground_truth.trim().parse::<i64>() {
        Ok(v) => (v + i64::from(offset)).to_string(),
        Err(_) => format!("{}{}", ground_truth.trim(), offset),
    }
}

/// Sampling contract shared by simulated and remote policies.
pub trait Policy {
    #[allow(clippy::too_many_arguments)]
    fn sample_solutions(
        &self,
        task: &Task,
        prompt: &str,
        group: usize,
        budget: u32,
        cutoff: Option<u32>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SolutionRollout>>;

    fn sample_metas(&self, task: &Task, prompt: &str, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<MetaPrediction>>;
}

/// The simulated policy bound to a parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct SimAgent<'a> {
    pub sim: &'a SimPolicy,
    pub params: &'a PolicyParams,
    pub shadow: bool,
}

impl Policy for SimAgent<'_> {
    fn sample_solutions(
        &self,
        task: &Task,
        prompt: &str,
        group: usize,
        budget: u32,
        cutoff: Option<u32>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SolutionRollout>> {
        if group == 0 {
            return Err(MasaError::Precondition("group size must be at least 1".into()));
        }
        if let Some(c) = cutoff {
            if c > budget {
                return Err(MasaError::Precondition("cutoff exceeds the budget".into()));
            }
        }
        (0..group)
            .map(|_| self.sim.sample_solution(self.params, task, prompt, budget, cutoff, rng, self.shadow))
            .collect()
    }

    fn sample_metas(&self, _task: &Task, prompt: &str, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<MetaPrediction>> {
        if count == 0 {
            return Err(MasaError::Precondition("meta count must be at least 1".into()));
        }
        (0..count).map(|_| self.sim.sample_meta(self.params, prompt, rng)).collect()
    }
}

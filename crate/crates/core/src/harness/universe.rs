//! Synthetic task universe.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{stream, Purpose};
use crate::error::{MasaError, Result};
use crate::policy::SimWorld;
use crate::types::{SimLatent, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimUniverseConfig {
    /// Training tasks.
    pub task_count: usize,
    /// Held-out evaluation tasks.
    pub eval_task_count: usize,
    /// Universe seed; the training seed when absent.
    pub seed: Option<u64>,
    /// Pass-rate ceiling per level, easiest first.
    pub level_ceilings: Vec<f64>,
    /// Uniform jitter on ceilings strictly between 0 and 1.
    pub ceiling_jitter: f64,
    pub length_base: f64,
    pub length_per_level: f64,
    /// Relative jitter of the per-task length mean.
    pub length_jitter: f64,
    /// Per-rollout length spread as a fraction of the mean.
    pub length_spread: f64,
    pub min_true_notions: usize,
    pub max_true_notions: usize,
    /// Probability that the problem text names one of its true notions.
    pub mention_prob: f64,
}

impl Default for SimUniverseConfig {
    fn default() -> Self {
        Self {
            task_count: 200,
            eval_task_count: 64,
            seed: None,
            level_ceilings: vec![1.0, 0.85, 0.65, 0.4, 0.0],
            ceiling_jitter: 0.1,
            length_base: 160.0,
            length_per_level: 90.0,
            length_jitter: 0.15,
            length_spread: 0.15,
            min_true_notions: 2,
            max_true_notions: 3,
            mention_prob: 0.3,
        }
    }
}

impl SimUniverseConfig {
    pub fn validate(&self, world: &SimWorld) -> Result<()> {
        let fail = |m: &str| Err(MasaError::Config(m.to_string()));
        if self.task_count == 0 {
            return fail("task_count must be positive");
        }
        if self.level_ceilings.len() != world.levels {
            return fail("level_ceilings needs one entry per world level");
        }
        if self.level_ceilings.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return fail("level ceilings must lie in [0, 1]");
        }
        if !(0.0..=0.5).contains(&self.ceiling_jitter) || !(0.0..1.0).contains(&self.length_jitter) {
            return fail("jitter out of range");
        }
        if !(self.length_base >= 1.0) || !(self.length_per_level >= 0.0) || !(self.length_spread >= 0.0) {
            return fail("length profile must be positive");
        }
        if self.min_true_notions == 0 || self.min_true_notions > self.max_true_notions {
            return fail("true-notion count range is empty");
        }
        let smallest_family = (0..world.strategies.len())
            .map(|s| world.family(s).len())
            .min()
            .unwrap_or(0);
        if self.max_true_notions > smallest_family {
            return fail("max_true_notions exceeds a strategy family");
        }
        if !(0.0..=1.0).contains(&self.mention_prob) {
            return fail("mention_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Training and evaluation tasks sharing one solution strategy per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub context_strategy: Vec<usize>,
    pub train: Vec<Task>,
    pub eval: Vec<Task>,
}

impl Universe {
    pub fn generate(cfg: &SimUniverseConfig, world: &SimWorld, default_seed: u64) -> Result<Self> {
        world.validate()?;
        cfg.validate(world)?;
        let seed = cfg.seed.unwrap_or(default_seed);
        let mut rng = stream(seed, 0, 0, Purpose::Universe);
        let context_strategy: Vec<usize> = (0..world.contexts())
            .map(|_| rng.random_range(0..world.strategies.len()))
            .collect();
        let train = make_tasks(cfg, world, &context_strategy, seed, 1, "train", cfg.task_count)?;
        let eval = make_tasks(cfg, world, &context_strategy, seed, 2, "eval", cfg.eval_task_count)?;
        Ok(Self {
            context_strategy,
            train,
            eval,
        })
    }
}

/// The training tasks of the universe.
pub fn gen_tasks(cfg: &SimUniverseConfig, world: &SimWorld, default_seed: u64) -> Result<Vec<Task>> {
    Ok(Universe::generate(cfg, world, default_seed)?.train)
}

fn make_tasks(
    cfg: &SimUniverseConfig,
    world: &SimWorld,
    context_strategy: &[usize],
    seed: u64,
    set: u64,
    prefix: &str,
    count: usize,
) -> Result<Vec<Task>> {
    let mut rng = stream(seed, set, 0, Purpose::Universe);
    let mut tasks = Vec::with_capacity(count);
    for i in 0..count {
        let topic = rng.random_range(0..world.topics.len());
        let level = rng.random_range(1..=world.levels);
        let ctx = world.context_index(topic, level);
        let strategy = context_strategy[ctx];

        let base = cfg.level_ceilings[level - 1];
        let difficulty = if base > 0.0 && base < 1.0 {
            (base + cfg.ceiling_jitter * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0)
        } else {
            base
        };
        let nominal = cfg.length_base + cfg.length_per_level * (level - 1) as f64;
        let length_mean = nominal * (1.0 + cfg.length_jitter * (2.0 * rng.random::<f64>() - 1.0));

        let family = world.family(strategy);
        let k = rng.random_range(cfg.min_true_notions..=cfg.max_true_notions);
        let mut picks: Vec<usize> = sample(&mut rng, family.len(), k).into_vec();
        picks.sort_unstable();
        let true_notions: Vec<String> = picks.iter().map(|&j| world.notions[family[j]].phrase.clone()).collect();

        let mention = if rng.random::<f64>() < cfg.mention_prob {
            let j = rng.random_range(0..true_notions.len());
            format!(" It may help to recall the {}.", true_notions[j])
        } else {
            String::new()
        };
        let answer: u32 = rng.random_range(1..=999);
        let code: u32 = rng.random_range(1000..=9999);
        let id = format!("{prefix}-{i:04}");
        let prompt = format!(
            "{} Problem {id}: determine the integer encoded by case {code}.{mention}",
            world.context_tag(ctx)
        );
        let task = Task::new(id, prompt, answer.to_string())?.with_latent(SimLatent {
            difficulty,
            true_notions,
            length_mean,
            length_spread: cfg.length_spread * length_mean,
            solution_strategy: strategy,
            context: ctx,
        })?;
        tasks.push(task);
    }
    Ok(tasks)
}

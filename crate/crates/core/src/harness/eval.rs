use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream, Purpose};
use crate::control::build_hints;
use crate::error::{MasaError, Result};
use crate::policy::{Policy, PolicyParams, SimAgent, SimPolicy};
use crate::textmeta::{render_meta_prompt, render_solution_prompt};
use crate::types::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub tasks: usize,
    pub samples: usize,
    pub pass_at_1: f64,
    pub pass_at_n: f64,
    /// Whether predicted notions were fed into the solution prompt.
    pub hinted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    pub budget: u32,
    pub seed: u64,
    pub step: u64,
    /// Meta rollouts per task used to build notion hints; `None` disables hints.
    pub hint_metas: Option<usize>,
    pub hint_cap: usize,
}

/// pass@1 (mean per-sample correctness) and pass@n (fraction of tasks with
/// at least one correct sample among n).
pub fn evaluate(sim: &SimPolicy, params: &PolicyParams, tasks: &[Task], opts: &EvalOptions) -> Result<EvalReport> {
    if opts.samples == 0 {
        return Err(MasaError::Precondition("evaluation needs at least one sample per task".into()));
    }
    let agent = SimAgent {
        sim,
        params,
        shadow: false,
    };
    let per_task: Vec<usize> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let hints = match opts.hint_metas {
                Some(m) if m > 0 => {
                    let prompt = render_meta_prompt(task, sim.max_response_tokens())?;
                    let mut rng = stream(opts.seed, opts.step, i as u64, Purpose::EvalMeta);
                    let metas = agent.sample_metas(task, &prompt, m, &mut rng)?;
                    build_hints(&metas, opts.hint_cap)
                }
                _ => Vec::new(),
            };
            let prompt = render_solution_prompt(task, &hints);
            let mut rng = stream(opts.seed, opts.step, i as u64, Purpose::Eval);
            let rollouts = agent.sample_solutions(task, &prompt, opts.samples, opts.budget, None, &mut rng)?;
            Ok(rollouts.iter().filter(|r| r.reward == 1.0).count())
        })
        .collect::<Result<_>>()?;
    let n = tasks.len().max(1) as f64;
    let correct: usize = per_task.iter().sum();
    Ok(EvalReport {
        step: opts.step,
        tasks: tasks.len(),
        samples: opts.samples,
        pass_at_1: correct as f64 / (n * opts.samples as f64),
        pass_at_n: per_task.iter().filter(|&&c| c > 0).count() as f64 / n,
        hinted: opts.hint_metas.is_some_and(|m| m > 0),
    })
}

use masa_core::expert::ExpertTrajectory;
use masa_core::harness::{stream, Purpose, RunConfig};
use masa_core::optim::{bc_loss_and_grad, grpo_loss_and_grad, TrainGroup, TrainRollout};
use masa_core::policy::{apply_gradient, Policy, PolicyParams, SequenceKind, SimAgent, SimPolicy};
use masa_core::textmeta::{render_meta_prompt, render_meta_text, render_solution_prompt};
use masa_core::{SolutionRollout, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn setup() -> (SimPolicy, Vec<Task>) {
    let (sim, universe) = RunConfig::default().build().unwrap();
    (sim, universe.train)
}

fn jitter(p: &PolicyParams, scale: f64, seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = p.clone();
    for t in &mut out.theta {
        let z: f64 = StandardNormal.sample(&mut rng);
        *t += scale * z;
    }
    out
}

struct Batch {
    prompt: String,
    solutions: Vec<SolutionRollout>,
    advantages: Vec<f64>,
}

fn batch(sim: &SimPolicy, task: &Task, params: &PolicyParams) -> Batch {
    let agent = SimAgent {
        sim,
        params,
        shadow: false,
    };
    let prompt = render_solution_prompt(task, &[]);
    let mut rng = stream(11, 1, 0, Purpose::Solution);
    let solutions = agent.sample_solutions(task, &prompt, 6, 1024, None, &mut rng).unwrap();
    let advantages = vec![1.2, -0.4, 0.9, -1.5, 0.3, -0.5];
    Batch {
        prompt,
        solutions,
        advantages,
    }
}

fn groups<'a>(b: &'a Batch, old: Option<&'a [Vec<f64>]>) -> Vec<TrainGroup<'a>> {
    vec![TrainGroup {
        rollouts: b
            .solutions
            .iter()
            .enumerate()
            .map(|(i, s)| TrainRollout {
                kind: SequenceKind::Solution,
                prompt: &b.prompt,
                tokens: &s.tokens,
                old_logprobs: old.map(|o| o[i].as_slice()),
                advantage: b.advantages[i],
            })
            .collect(),
        weight: 1.0,
    }]
}

#[test]
fn on_policy_ratios_are_one() {
    let (sim, tasks) = setup();
    let params = jitter(&sim.init_params(), 0.3, 1);
    let b = batch(&sim, &tasks[2], &params);
    let own: Vec<Vec<f64>> = b.solutions.iter().map(|s| s.logprobs.clone()).collect();
    assert!(grpo_loss_and_grad(&sim, &groups(&b, None), &params, 0.2, 0.28).is_err());
    let same = grpo_loss_and_grad(&sim, &groups(&b, Some(&own)), &params, 0.2, 0.28).unwrap();
    assert!(same.ratios.iter().flatten().all(|&r| (r - 1.0).abs() < 1e-12));
    assert_eq!(same.clip_fraction, 0.0);
    let mean_adv = b.advantages.iter().sum::<f64>() / b.advantages.len() as f64;
    assert!((same.loss + mean_adv).abs() < 1e-12, "on-policy loss is minus the mean advantage");
}

#[test]
fn wider_clip_range_clips_less() {
    let (sim, tasks) = setup();
    let old = jitter(&sim.init_params(), 0.3, 2);
    let params = jitter(&old, 0.2, 3);
    let b = batch(&sim, &tasks[5], &old);
    let own: Vec<Vec<f64>> = b.solutions.iter().map(|s| s.logprobs.clone()).collect();
    let g = groups(&b, Some(&own));
    let mut last = f64::INFINITY;
    for eps in [0.01, 0.05, 0.1, 0.2, 0.4, 0.8] {
        let r = grpo_loss_and_grad(&sim, &g, &params, eps, eps * 1.4).unwrap();
        assert!(r.clip_fraction <= last, "eps {eps}: {} after {last}", r.clip_fraction);
        last = r.clip_fraction;
    }
}

#[test]
fn small_sgd_steps_reduce_bc_loss() {
    let (sim, tasks) = setup();
    let mut params = jitter(&sim.init_params(), 0.2, 4);
    let experts: Vec<ExpertTrajectory> = tasks
        .iter()
        .take(8)
        .enumerate()
        .map(|(i, task)| {
            let prompt = render_meta_prompt(task, 1024).unwrap();
            let agent = SimAgent {
                sim: &sim,
                params: &params,
                shadow: false,
            };
            let mut rng = stream(12, 1, i as u64, Purpose::Meta);
            let m = agent.sample_metas(task, &prompt, 2, &mut rng).unwrap().remove(0);
            let mut record = m.parsed.clone().unwrap();
            record.pass_rate = (i % 9) as u32;
            ExpertTrajectory {
                task_id: task.id.clone(),
                prompt,
                tokens: sim.encode_meta(&record).unwrap(),
                text: render_meta_text(&m.reasoning_text, &record),
                record,
                source_step: 1,
                notion_reward: 1.0,
            }
        })
        .collect();
    for lr in [1e-3, 1e-4] {
        let mut last = bc_loss_and_grad(&sim, &experts, &params).unwrap().loss;
        for _ in 0..5 {
            let r = bc_loss_and_grad(&sim, &experts, &params).unwrap();
            apply_gradient(&mut params, &r.grad, lr).unwrap();
            let now = bc_loss_and_grad(&sim, &experts, &params).unwrap().loss;
            assert!(now < last, "lr {lr}: {now} >= {last}");
            last = now;
        }
    }
}

#[test]
fn empty_bc_buffer_is_an_error() {
    let (sim, _) = setup();
    assert!(bc_loss_and_grad(&sim, &[], &sim.init_params()).is_err());
}

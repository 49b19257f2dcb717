use masa_core::harness::{analyze_log, replay_log, run, LogReader, LogRecord, RunConfig};
use masa_core::policy::{Policy, SimAgent};
use masa_core::textmeta::{render_meta_prompt, render_solution_prompt};
use masa_core::{GroupSample, Mode, TrainConfig};

#[test]
fn partial_toml_keeps_desk_defaults() {
    let cfg = RunConfig::from_toml(
        r#"
        [train]
        rng_seed = 9
        mode = "baseline"

        [run]
        eval_samples = 4
        "#,
    )
    .unwrap();
    let mut want = RunConfig::default();
    want.train.rng_seed = 9;
    want.train.mode = Mode::Baseline;
    want.run.eval_samples = 4;
    assert_eq!(cfg, want);
    assert_eq!(cfg.train.group_size, TrainConfig::desk().group_size);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::from_toml("[train]\ngroup_sise = 4\n").is_err());
    assert!(RunConfig::from_toml("[nonsense]\nx = 1\n").is_err());
    assert!(RunConfig::from_toml("[train]\nmeta_size = 1\n").unwrap().validate().is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = RunConfig::default();
    cfg.train.grad_clip = Some(0.5);
    cfg.universe.seed = Some(3);
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn group_sample_round_trips_through_json() {
    let (sim, universe) = RunConfig::default().build().unwrap();
    let params = sim.init_params();
    let agent = SimAgent {
        sim: &sim,
        params: &params,
        shadow: true,
    };
    let task = universe.train[0].clone();
    let mut rng = masa_core::harness::stream(1, 1, 0, masa_core::harness::Purpose::Solution);
    let solutions = agent
        .sample_solutions(&task, &render_solution_prompt(&task, &[]), 4, 1024, Some(200), &mut rng)
        .unwrap();
    let metas = agent
        .sample_metas(&task, &render_meta_prompt(&task, 1024).unwrap(), 2, &mut rng)
        .unwrap();
    let group = GroupSample {
        solution_rewards: solutions.iter().map(|s| s.reward).collect(),
        meta_rewards: vec![0.25, 0.5],
        task,
        solutions,
        metas,
        solution_advantages: Some(vec![1.0, -1.0, 1.0, -1.0]),
        meta_advantages: None,
    };
    let back: GroupSample = serde_json::from_str(&serde_json::to_string(&group).unwrap()).unwrap();
    assert_eq!(back, group);
}

#[test]
fn logged_run_replays_and_analyzes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.train.total_steps = 6;
    cfg.train.efficient_start = 3;
    cfg.train.rng_seed = 4;
    cfg.run.out_dir = dir.path().to_path_buf();
    cfg.run.eval_every = 3;
    cfg.run.checkpoint_every = 3;
    let summary = run(&cfg).unwrap();
    let records = LogReader::read_path(&dir.path().join("rollouts.jsonl")).unwrap();
    assert!(matches!(records[0], LogRecord::Header(_)));
    assert_eq!(records.iter().filter(|r| matches!(r, LogRecord::Eval(_))).count(), 2);
    assert!(replay_log(&records).unwrap().matches());

    let groups = analyze_log(&records);
    assert_eq!(groups.len(), 6 * cfg.train.batch_tasks);
    for g in groups.iter().filter(|g| !g.solution_rewards.is_empty()) {
        assert_eq!(g.meta_rewards.len(), cfg.train.meta_size);
    }
    for step in [3, 6] {
        let path = dir.path().join("checkpoints").join(format!("step_{step:05}.json"));
        let state = masa_core::harness::load_checkpoint(&path).unwrap();
        assert_eq!(state.step, step);
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert_eq!(summary.metrics.len(), 6);
}

#[test]
fn tampered_log_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.train.total_steps = 2;
    cfg.train.efficient_start = 2;
    cfg.train.mode = Mode::Masa;
    cfg.run.out_dir = dir.path().to_path_buf();
    cfg.run.eval_every = 0;
    run(&cfg).unwrap();
    let mut records = LogReader::read_path(&dir.path().join("rollouts.jsonl")).unwrap();
    let target = records
        .iter_mut()
        .find_map(|r| match r {
            LogRecord::Rollout(s) if s.step == 2 => Some(s),
            _ => None,
        })
        .unwrap();
    target.text = if target.reward == Some(1.0) { "no answer".into() } else { format!("\\boxed{{{}}}", target.ground_truth) };
    let report = replay_log(&records).unwrap();
    assert_eq!(report.mismatched_steps, vec![2]);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn masa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masa")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "[train]\ntotal_steps = 6\nefficient_start = 3\nrng_seed = 5\n\n[run]\neval_every = 3\neval_samples = 2\ncheckpoint_every = 3\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_replay_analyze_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let o = masa(&["run", "--config", &cfg, "--mode", "masa-efficient", "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("steps 6"));
    for name in ["rollouts.jsonl", "metrics.csv", "experts.jsonl", "checkpoints/step_00006.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }

    let log = out.join("rollouts.jsonl");
    let o = masa(&["replay", "--log", log.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("replayed 6 steps: 0 mismatched, 0 missing"));

    let o = masa(&["analyze", "--log", log.to_str().unwrap(), "--json"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 6 * 8);

    let ckpt = out.join("checkpoints/step_00006.json");
    let o = masa(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--samples", "3"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["step"], 6);
    assert_eq!(report["samples"], 3);
    assert!(report["pass_at_1"].as_f64().unwrap() <= report["pass_at_n"].as_f64().unwrap());
}

#[test]
fn seeded_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let mut logs = Vec::new();
    for _ in 0..2 {
        let o = masa(&["run", "--config", &cfg, "--seed", "8", "--algorithm", "dapo", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        logs.push(fs::read(out.join("rollouts.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn tampered_log_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    assert!(masa(&["run", "--config", &cfg, "--mode", "baseline", "--out", out.to_str().unwrap()]).status.success());
    let log = out.join("rollouts.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let edited: Vec<String> = text
        .lines()
        .map(|l| {
            if l.contains("\"kind\":\"step\"") && l.contains("\"step\":2,") {
                l.replacen("\"tasks\":8", "\"tasks\":9", 1)
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(&log, edited.join("\n") + "\n").unwrap();
    let o = masa(&["replay", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("mismatch at step 2"));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[train]\ngroup_sise = 4\n").unwrap();
    let o = masa(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("group_sise"));

    let o = masa(&["replay", "--log", dir.path().join("missing.jsonl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

/// A headerless two-task log with rewards worked out by hand.
#[test]
fn analyze_external_log() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = "Find the positive x with x squared equal to 49.";
    let p2 = "How many residues does the set have?";
    let rollout = |task: &str, problem: &str, gt: &str, text: &str, length: usize| {
        serde_json::json!({"kind": "rollout", "task_id": task, "problem": problem, "ground_truth": gt, "text": text, "length": length})
    };
    let meta = |task: &str, problem: &str, gt: &str, text: &str| {
        serde_json::json!({"kind": "meta", "task_id": task, "problem": problem, "ground_truth": gt, "text": text})
    };
    let lines = [
        rollout("t1", p1, "7", "Using the quadratic formula we get \\boxed{7}", 300),
        rollout("t1", p1, "7", "By completing the square x is \\boxed{7}", 500),
        rollout("t1", p1, "7", "By the quadratic formula x = \\boxed{-7}", 700),
        rollout("t1", p1, "7", "guess \\boxed{5}", 200),
        meta(
            "t1",
            p1,
            "7",
            r#"<meta>plan</meta> {"math_notion":["quadratic formula","completing the square"],"pass_rate":4,"solution_length":400}"#,
        ),
        meta("t1", p1, "7", r#"<meta>x</meta>{"math_notion":["pythagorean theorem"],"pass_rate":8,"solution_length":600}"#),
        meta("t1", p1, "7", "no record at all"),
        rollout("t2", p2, "3", "\\boxed{4}", 100),
        rollout("t2", p2, "3", "no answer", 150),
        meta("t2", p2, "3", r#"<meta></meta>{"math_notion":["modular arithmetic"],"pass_rate":0,"solution_length":128}"#),
    ];
    let log = dir.path().join("external.jsonl");
    let body: String = lines.iter().map(|l| l.to_string() + "\n").collect();
    fs::write(&log, body).unwrap();

    let o = masa(&["analyze", "--log", log.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let groups: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(groups.len(), 2);

    let expect = |g: &serde_json::Value, i: usize, want: [f64; 4]| {
        let r = &g["meta_rewards"][i];
        for (key, w) in ["r_length", "r_difficulty", "r_notion", "r_meta"].iter().zip(want) {
            let got = r[key].as_f64().unwrap();
            assert!((got - w).abs() < 1e-12, "{} meta {i} {key}: {got} vs {w}", g["task_id"]);
        }
    };
    let t1 = &groups[0];
    assert_eq!(t1["task_id"], "t1");
    assert_eq!(t1["solution_rewards"], serde_json::json!([1.0, 1.0, 0.0, 0.0]));
    assert_eq!(t1["pass_rate"], 0.5);
    assert_eq!(t1["parsed_metas"], 2);
    expect(t1, 0, [1.0, 1.0, 0.5, 2.5 / 3.0]);
    expect(t1, 1, [0.0, 0.1, 0.0, 0.1 / 3.0]);
    expect(t1, 2, [0.0, 0.0, 0.0, 0.0]);

    let t2 = &groups[1];
    assert_eq!(t2["solution_rewards"], serde_json::json!([0.0, 0.0]));
    expect(t2, 0, [0.0, 1.0, 0.0, 1.0 / 3.0]);

    let o = masa(&["analyze", "--log", log.to_str().unwrap()]);
    let table = stdout(&o);
    assert!(table.contains("meta 0: length 1.000000000  difficulty 1.000000000  notion 0.500000000  total 0.833333333"));
}

//! End-to-end CLI runs against a shrunken scenario: every subcommand,
//! the exit-code contract, and byte-level determinism of artifacts.

use std::fs;
use std::path::Path;

use vsl_cli::cli_main;
use vsl_core::env::{write_episode_csv, EpisodeLogRow};
use vsl_core::metrics::TimeSpaceGrid;
use vsl_core::scenario::desk_train;

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("vsl").chain(args.iter().copied()))
}

/// Desk scenario cut down to a 3-step episode so trains finish fast.
fn tiny_scenario(dir: &Path, name: &str) -> std::path::PathBuf {
    let mut sc = desk_train();
    sc.name = name.to_string();
    sc.env.episode_steps = 3;
    sc.env.warmup_windows = 1;
    let path = dir.join(format!("{name}.toml"));
    sc.save(&path).unwrap();
    path
}

fn tiny_train_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("train.toml");
    fs::write(
        &path,
        "batch_steps = 3\nppo_epochs = 2\nhidden = [8, 8]\ntotal_env_steps = 6\ncheckpoint_every = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&[]), 1);
    assert_eq!(run(&["bogus"]), 1);
    assert_eq!(run(&["evaluate", "--controller", "nope", "--out-dir", "x"]), 1);
    assert_eq!(run(&["train"]), 1);
}

#[test]
fn train_then_evaluate_replay_attribute_export() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scen = tiny_scenario(dir, "tiny");
    let cfg = tiny_train_config(dir);
    let run_dir = dir.join("run");

    assert_eq!(
        run(&[
            "train",
            "--scenario",
            scen.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            run_dir.to_str().unwrap(),
            "--quiet",
        ]),
        0
    );
    for artifact in [
        "curve.csv",
        "checkpoint.json",
        "checkpoint-3.json",
        "scenario.toml",
        "train-config.toml",
    ] {
        assert!(run_dir.join(artifact).is_file(), "missing {artifact}");
    }
    let ck = run_dir.join("checkpoint.json");

    // Evaluate the trained policy next to the no-control baseline.
    let eval_dir = dir.join("eval");
    assert_eq!(
        run(&[
            "evaluate",
            "--scenario",
            scen.to_str().unwrap(),
            "--controller",
            "no-control",
            "--controller",
            "policy",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--seeds",
            "2",
            "--seed-base",
            "5",
            "--out-dir",
            eval_dir.to_str().unwrap(),
        ]),
        0
    );
    let report = fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert!(report.starts_with("controller,seed,"));
    assert!(report.contains("no-control,5,"));
    assert!(report.contains("policy,mean,"));
    for stem in ["no-control-seed5", "no-control-seed6", "policy-seed5", "policy-seed6"] {
        for suffix in ["limits", "speeds", "log"] {
            assert!(eval_dir.join(format!("{stem}-{suffix}.csv")).is_file());
        }
    }
    let grid = TimeSpaceGrid::read_csv(&eval_dir.join("no-control-seed5-limits.csv")).unwrap();
    assert_eq!(grid.n_rows(), 6);
    assert_eq!(grid.n_steps(), 3);
    assert!(grid.rows().iter().flatten().all(|&v| v == 70.0));

    // Policy controllers demand a checkpoint up front.
    assert_eq!(
        run(&[
            "evaluate",
            "--scenario",
            scen.to_str().unwrap(),
            "--controller",
            "policy",
            "--out-dir",
            eval_dir.to_str().unwrap(),
        ]),
        1
    );

    // A checkpoint applied to a different scenario is refused unless
    // explicitly allowed.
    let other = tiny_scenario(dir, "tiny-b");
    let eval_b = dir.join("eval-b");
    let mismatch = [
        "evaluate",
        "--scenario",
        other.to_str().unwrap(),
        "--controller",
        "policy",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--seeds",
        "1",
        "--out-dir",
        eval_b.to_str().unwrap(),
    ];
    assert_eq!(run(&mismatch), 2);
    let mut allowed: Vec<&str> = mismatch.to_vec();
    allowed.push("--allow-scenario-mismatch");
    assert_eq!(run(&allowed), 0);

    // Replay recorded detector data through the trained policy.
    let day = dir.join("day.csv");
    let mut csv = String::from("timestamp,sensor_id,milemarker,speed_mph,occupancy,volume\n");
    for window in 0..3 {
        let t = 21600 + 60 * window;
        csv.push_str(&format!("{t},s0,0.35,65.0,0.05,900\n"));
        csv.push_str(&format!("{t},s1,0.85,64.0,0.06,880\n"));
    }
    fs::write(&day, &csv).unwrap();
    let replay_dir = dir.join("replay");
    assert_eq!(
        run(&[
            "replay",
            "--data",
            day.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--scenario",
            scen.to_str().unwrap(),
            "--out-dir",
            replay_dir.to_str().unwrap(),
        ]),
        0
    );
    let limits = TimeSpaceGrid::read_csv(&replay_dir.join("limits.csv")).unwrap();
    assert_eq!(limits.n_rows(), 6);
    assert_eq!(limits.n_steps(), 3);

    // Malformed detector data is a validation failure.
    let bad = dir.join("bad.csv");
    fs::write(
        &bad,
        "timestamp,sensor_id,milemarker,speed_mph,occupancy,volume\n0,s0,0.35,65.0,1.4,900\n",
    )
    .unwrap();
    assert_eq!(
        run(&[
            "replay",
            "--data",
            bad.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--scenario",
            scen.to_str().unwrap(),
            "--out-dir",
            replay_dir.to_str().unwrap(),
        ]),
        2
    );

    // Export the evaluation episode log as agent-by-step grids.
    let export_dir = dir.join("export");
    assert_eq!(
        run(&[
            "export-grids",
            "--log",
            eval_dir.join("policy-seed5-log.csv").to_str().unwrap(),
            "--out-dir",
            export_dir.to_str().unwrap(),
        ]),
        0
    );
    let actions = TimeSpaceGrid::read_csv(&export_dir.join("limits.csv")).unwrap();
    assert_eq!(actions.n_rows(), 4);
    assert_eq!(actions.n_steps(), 3);

    // Missing log file is a runtime failure.
    assert_eq!(
        run(&[
            "export-grids",
            "--log",
            dir.join("nope.csv").to_str().unwrap(),
            "--out-dir",
            export_dir.to_str().unwrap(),
        ]),
        3
    );

    // Attribute a hand-written 70 -> 30 transition.
    let mk = |step, agent, action_mph, nu, occ| EpisodeLogRow {
        step,
        agent,
        action_mph,
        nu,
        occ,
        r1: 0.0,
        r2: 0.0,
        r3: 0.0,
        total: 0.0,
    };
    let log_rows = vec![
        mk(0, 0, 70.0, 60.0, 0.08),
        mk(0, 1, 70.0, 55.0, 0.12),
        mk(1, 0, 30.0, 31.0, 0.30),
        mk(1, 1, 40.0, 45.0, 0.20),
    ];
    let log_path = dir.join("hand-log.csv");
    write_episode_csv(fs::File::create(&log_path).unwrap(), &log_rows).unwrap();
    let attr_out = dir.join("attr.csv");
    assert_eq!(
        run(&[
            "attribute",
            "--log",
            log_path.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--case",
            "70-30",
            "--steps",
            "64",
            "--out",
            attr_out.to_str().unwrap(),
        ]),
        0
    );
    let attr = fs::read_to_string(&attr_out).unwrap();
    let lines: Vec<&str> = attr.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one case row:\n{attr}");
    assert!(lines[0].starts_with("case,instances,"));
    assert!(lines[1].starts_with("70-30,1,"));

    // A case with no matching transitions still succeeds, with no row.
    let attr_empty = dir.join("attr-empty.csv");
    assert_eq!(
        run(&[
            "attribute",
            "--log",
            log_path.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--case",
            "40-50",
            "--steps",
            "64",
            "--out",
            attr_empty.to_str().unwrap(),
        ]),
        0
    );
    assert_eq!(fs::read_to_string(&attr_empty).unwrap().lines().count(), 1);

    // Bad case syntax is a usage error.
    assert_eq!(
        run(&[
            "attribute",
            "--log",
            log_path.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--case",
            "70-31",
            "--out",
            attr_out.to_str().unwrap(),
        ]),
        1
    );
}

#[test]
fn training_artifacts_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scen = tiny_scenario(dir, "tiny");
    let cfg = tiny_train_config(dir);

    for out in ["a", "b"] {
        assert_eq!(
            run(&[
                "train",
                "--scenario",
                scen.to_str().unwrap(),
                "--config",
                cfg.to_str().unwrap(),
                "--out-dir",
                dir.join(out).to_str().unwrap(),
                "--quiet",
            ]),
            0
        );
    }

    let curve_a = fs::read(dir.join("a/curve.csv")).unwrap();
    let curve_b = fs::read(dir.join("b/curve.csv")).unwrap();
    assert_eq!(curve_a, curve_b, "learning curves must match byte for byte");

    // Checkpoints match except for the wall-clock creation stamp.
    let strip = |path: &Path| -> serde_json::Value {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("meta");
        v
    };
    assert_eq!(
        strip(&dir.join("a/checkpoint.json")),
        strip(&dir.join("b/checkpoint.json"))
    );
}

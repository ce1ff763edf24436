//! End-to-end checks of the `crm` binary: exit codes, file outputs, flag
//! validation, config-file precedence, and byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

fn crm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let output = crm(
        &[
            "run", "--process", "markov", "--states", "2", "--stay", "0.8", "--steps", "2000",
            "--bound", "markov-indicator", "--epsilon", "0.5", "--subroutine", "gnb", "--seed",
            "42", "--out", "trace.csv", "--summary", "out.json",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,chosen_id,created,pool_size,prediction,label,loss,epsilon"));
    assert_eq!(trace.lines().count(), 2001);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap())
            .unwrap();
    for key in ["n", "error_rate", "pool_size", "k_support", "m_min_updates"] {
        assert!(summary.get(key).is_some(), "summary misses {key}");
    }
    assert_eq!(summary["pool_size"], 2);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "run", "--process", "iid", "--probs", "0.3,0.7", "--steps", "500", "--bound", "zero",
        "--epsilon", "0.1", "--subroutine", "gnb", "--seed", "7", "--out", "a.csv", "--summary",
        "a.json",
    ];
    assert_exit(&crm(&args, dir.path()), 0);
    let first = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_exit(&crm(&args, dir.path()), 0);
    let second = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn missing_threshold_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = crm(
        &["run", "--process", "iid", "--probs", "0.5,0.5", "--steps", "10"],
        dir.path(),
    );
    assert_exit(&output, 2);
}

#[test]
fn run_rejects_grid() {
    let dir = tempfile::tempdir().unwrap();
    let output = crm(
        &[
            "run", "--process", "iid", "--steps", "10", "--grid", "0.1,0.5",
        ],
        dir.path(),
    );
    assert_exit(&output, 2);
}

#[test]
fn sweep_cells_match_standalone_runs() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--process", "markov", "--states", "3", "--stay", "0.7", "--steps", "400", "--bound",
        "markov-indicator", "--subroutine", "gnb", "--seed", "5",
    ];
    let mut sweep_args = vec!["sweep"];
    sweep_args.extend_from_slice(&common);
    sweep_args.extend_from_slice(&["--grid", "0.3,0.9", "--out-dir", "sweepout"]);
    assert_exit(&crm(&sweep_args, dir.path()), 0);

    let table = std::fs::read_to_string(dir.path().join("sweepout/sweep_table.csv")).unwrap();
    assert!(table.starts_with("epsilon,gnb"));
    let cells: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();

    for (i, eps) in ["0.3", "0.9"].iter().enumerate() {
        let mut run_args = vec!["run"];
        run_args.extend_from_slice(&common);
        run_args.extend_from_slice(&[
            "--epsilon", eps, "--out", "solo.csv", "--summary", "solo.json",
        ]);
        assert_exit(&crm(&run_args, dir.path()), 0);
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("solo.json")).unwrap(),
        )
        .unwrap();
        let solo = summary["error_rate"].as_f64().unwrap();
        assert!(
            (cells[i] - solo).abs() < 1e-12,
            "sweep cell {} vs standalone {solo}",
            cells[i]
        );
    }
}

#[test]
fn sweep_without_grid_uses_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let output = crm(
        &[
            "sweep", "--process", "markov", "--states", "2", "--stay", "0.8", "--steps", "50",
            "--bound", "markov-indicator", "--subroutine", "gnb", "--seed", "5", "--out-dir",
            "out",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);
    let table = std::fs::read_to_string(dir.path().join("out/sweep_table.csv")).unwrap();
    // the label-style default grid starts at 0.005 and ends at 0.5
    assert!(table.lines().nth(1).unwrap().starts_with("0.005,"));
    assert!(table.lines().last().unwrap().starts_with("0.5,"));
}

#[test]
fn ensemble_writes_combiner_columns() {
    let dir = tempfile::tempdir().unwrap();
    let output = crm(
        &[
            "ensemble", "--process", "markov", "--states", "2", "--stay", "0.8", "--steps",
            "300", "--bound", "markov-indicator", "--grid", "0.3,0.7", "--combiner", "ewa",
            "--eta", "0.5", "--subroutine", "gnb", "--seed", "2", "--out", "ens.csv",
            "--summary", "ens.json",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);
    let trace = std::fs::read_to_string(dir.path().join("ens.csv")).unwrap();
    assert!(trace.starts_with("step,prediction,label,loss,top_weight_member,top_weight"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ens.json")).unwrap())
            .unwrap();
    assert_eq!(summary["eta"], 0.5);
    assert_eq!(summary["rule"], "ewa");

    // ftl trace carries the member choice, always inside the grid
    let output = crm(
        &[
            "ensemble", "--process", "markov", "--states", "2", "--stay", "0.8", "--steps",
            "300", "--bound", "markov-indicator", "--grid", "0.3,0.7", "--combiner", "ftl",
            "--subroutine", "gnb", "--seed", "2", "--out", "ftl.csv", "--summary", "ftl.json",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);
    let trace = std::fs::read_to_string(dir.path().join("ftl.csv")).unwrap();
    assert!(trace.starts_with("step,prediction,label,loss,combiner_choice"));
    for line in trace.lines().skip(1) {
        let choice: usize = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(choice < 2);
    }
}

#[test]
fn verify_passes_on_zero_and_markov_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let output = crm(
        &[
            "verify", "--process", "iid", "--probs", "1.0,0.0", "--steps", "10", "--bound",
            "zero", "--epsilon", "0.1", "--seed", "1",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);

    // alternating labels via the deterministic 2-cycle chain
    let output = crm(
        &[
            "verify", "--process", "markov", "--states", "2", "--stay", "0.0", "--steps", "12",
            "--bound", "markov-indicator", "--epsilon", "0.5", "--seed", "1",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("pass"), "stdout: {stdout}");
}

#[test]
fn verify_rejects_corrupted_matrix_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    // triangle-inequality violation
    std::fs::write(dir.path().join("bad.csv"), "0,5,10\n5,0,1\n10,1,0\n").unwrap();
    let output = crm(
        &[
            "verify", "--process", "iid", "--probs", "1.0", "--classes", "1", "--steps", "3",
            "--bound", "precomputed", "--matrix", "bad.csv", "--epsilon", "0.5", "--seed", "1",
        ],
        dir.path(),
    );
    assert_exit(&output, 4);
}

#[test]
fn verify_refuses_large_n_without_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "verify", "--process", "markov", "--states", "2", "--stay", "0.5", "--steps", "60",
        "--bound", "markov-indicator", "--epsilon", "0.5", "--seed", "1",
    ];
    assert_exit(&crm(&base, dir.path()), 2);
    let mut with_greedy = base.to_vec();
    with_greedy.push("--greedy");
    assert_exit(&crm(&with_greedy, dir.path()), 0);
}

#[test]
fn config_file_fills_gaps_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("config.json"),
        serde_json::json!({
            "process": "markov",
            "states": 2,
            "stay": 0.8,
            "steps": 300,
            "bound": "markov-indicator",
            "epsilon": 0.5,
            "subroutine": "gnb",
            "seed": 42,
            "out": "from_config.csv",
            "summary": "from_config.json"
        })
        .to_string(),
    )
    .unwrap();
    let output = crm(&["run", "--config", "config.json"], dir.path());
    assert_exit(&output, 0);
    assert!(dir.path().join("from_config.csv").exists());

    // the flag overrides the config's seed; a different stream results
    let output = crm(
        &[
            "run", "--config", "config.json", "--seed", "43", "--out", "override.csv",
            "--summary", "override.json",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);
    let a = std::fs::read(dir.path().join("from_config.csv")).unwrap();
    let b = std::fs::read(dir.path().join("override.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn csv_process_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = String::from("key,x1,x2,y\n");
    for i in 0..40 {
        rows.push_str(&format!(
            "g{},{},{},{}\n",
            i / 2,
            i as f64 * 0.1,
            1.0 - i as f64 * 0.05,
            i % 2
        ));
    }
    std::fs::write(dir.path().join("data.csv"), rows).unwrap();
    let output = crm(
        &[
            "run", "--process", "csv", "--csv", "data.csv", "--label-column", "y",
            "--feature-columns", "x1,x2", "--chunk-key", "key", "--classes", "2",
            "--feature-dim", "2", "--steps", "0", "--bound", "label-window-d2", "--epsilon",
            "0.25", "--subroutine", "gnb", "--out", "t.csv", "--summary", "s.json",
        ],
        dir.path(),
    );
    assert_exit(&output, 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap())
            .unwrap();
    assert_eq!(summary["n"], 20); // 40 rows grouped in pairs

    // a schema naming a missing column is a configuration error
    let output = crm(
        &[
            "run", "--process", "csv", "--csv", "data.csv", "--label-column", "label",
            "--epsilon", "0.25", "--out", "t.csv", "--summary", "s.json",
        ],
        dir.path(),
    );
    assert_exit(&output, 2);
}

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let output = crm(&["run", "--help"], dir.path());
    assert_exit(&output, 0);
    let help = String::from_utf8_lossy(&output.stdout);
    for flag in [
        "--process", "--bound", "--epsilon", "--schedule", "--grid", "--subroutine", "--lr",
        "--conversion", "--delta", "--window", "--seed", "--out", "--summary",
    ] {
        assert!(help.contains(flag), "help misses {flag}");
    }
    for default in ["default: 5", "default: 0.1", "default: 0.05", "default: last"] {
        assert!(help.contains(default), "help misses `{default}`");
    }
}

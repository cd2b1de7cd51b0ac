//! End-to-end checks of the `parasearch` binary: exit codes, output
//! formats, and byte-for-byte determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("fixtures")
        .join("llama2-7b-a800-64")
}

fn base_command(out: &Path, rules: &Path) -> Command {
    let dir = fixtures_dir();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_parasearch"));
    cmd.args([
        "--mode",
        "homogeneous",
        "--gpu-type",
        "A800",
        "--gpu-count",
        "64",
        "--global-batch",
        "512",
        "--seq-len",
        "4096",
        "--top-k",
        "5",
    ]);
    cmd.arg("--model").arg(dir.join("model.json"));
    cmd.arg("--catalog").arg(dir.join("catalog.json"));
    cmd.arg("--rules").arg(rules);
    cmd.arg("--mem-coeffs").arg(dir.join("coeffs.json"));
    cmd.arg("--profile").arg(dir.join("profile.csv"));
    cmd.arg("--out").arg(out);
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn small_search_succeeds_with_valid_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    // a narrow explicit space keeps this test quick
    let space = tmp.path().join("space.json");
    std::fs::write(
        &space,
        r#"{"pipeline_model_parallel_size": [1, 2],
            "tensor_model_parallel_size": [4],
            "micro_batch_size": [1],
            "sequence_parallel": [true],
            "use_distributed_optimizer": [true],
            "recompute_granularity": ["none"],
            "recompute_method": ["none"],
            "recompute_num_layers": [1],
            "offload_optimizer": [false]}"#,
    )
    .unwrap();
    let output = run(base_command(&out, &fixtures_dir().join("rules.txt")).arg("--space").arg(&space));
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["counts"]["generated"], 2);
    assert!(!report["strategies"].as_array().unwrap().is_empty());
    // timings stay out of the JSON unless asked for
    assert!(report.get("timings").is_none());
    // counter conservation straight off the emitted file
    let c = &report["counts"];
    let drops: u64 = c["rule_drops"]
        .as_array()
        .unwrap()
        .iter()
        .map(|pair| pair[1].as_u64().unwrap())
        .sum();
    assert_eq!(
        c["generated"].as_u64().unwrap(),
        c["simulated"].as_u64().unwrap()
            + drops
            + c["memory_dropped"].as_u64().unwrap()
            + c["infeasible_partition"].as_u64().unwrap()
            + c["unsupported"].as_u64().unwrap()
    );
}

#[test]
fn identical_invocations_emit_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let space = tmp.path().join("space.json");
    std::fs::write(
        &space,
        r#"{"pipeline_model_parallel_size": [1, 2, 4],
            "tensor_model_parallel_size": [1, 2],
            "micro_batch_size": [1, 2],
            "recompute_granularity": ["none", "full"],
            "recompute_method": ["uniform"],
            "recompute_num_layers": [1],
            "sequence_parallel": [true],
            "use_distributed_optimizer": [false],
            "offload_optimizer": [false]}"#,
    )
    .unwrap();
    let out_a = tmp.path().join("a.json");
    let out_b = tmp.path().join("b.json");
    let rules = fixtures_dir().join("rules.txt");
    let status_a = run(base_command(&out_a, &rules)
        .arg("--space")
        .arg(&space)
        .args(["--workers", "1"]));
    let status_b = run(base_command(&out_b, &rules)
        .arg("--space")
        .arg(&space)
        .args(["--workers", "4"]));
    assert!(status_a.status.success() && status_b.status.success());
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "reports differ across worker counts");
}

#[test]
fn empty_result_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    let rules = tmp.path().join("rules.txt");
    std::fs::write(&rules, "1 == 1\n").unwrap();
    let dir = fixtures_dir();
    // an always-drop rule empties the result set
    let output = run(base_command(&out, &rules)
        .arg("--space")
        .arg(dir.join("space.json")));
    assert_eq!(output.status.code(), Some(2));
    // the report is still valid JSON with an empty strategy list
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["strategies"].as_array().unwrap().len(), 0);
    assert_eq!(report["counts"]["simulated"], 0);
}

#[test]
fn bad_inputs_exit_one_with_module_context() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    let bad_model = tmp.path().join("model.json");
    std::fs::write(
        &bad_model,
        r#"{"family":"x","num_layers":0,"hidden_size":8,"num_heads":2,
            "intermediate_size":16,"vocab_size":32}"#,
    )
    .unwrap();
    let dir = fixtures_dir();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_parasearch"));
    cmd.args([
        "--mode",
        "homogeneous",
        "--gpu-type",
        "A800",
        "--gpu-count",
        "64",
        "--global-batch",
        "512",
        "--seq-len",
        "4096",
    ]);
    cmd.arg("--model").arg(&bad_model);
    cmd.arg("--catalog").arg(dir.join("catalog.json"));
    cmd.arg("--out").arg(&out);
    let output = run(&mut cmd);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("num_layers"), "stderr: {stderr}");
}

#[test]
fn text_format_renders_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.txt");
    let space = tmp.path().join("space.json");
    std::fs::write(
        &space,
        r#"{"pipeline_model_parallel_size": [2],
            "tensor_model_parallel_size": [2],
            "micro_batch_size": [1],
            "sequence_parallel": [true],
            "use_distributed_optimizer": [false],
            "recompute_granularity": ["none"],
            "recompute_method": ["none"],
            "recompute_num_layers": [1],
            "offload_optimizer": [false]}"#,
    )
    .unwrap();
    let output = run(base_command(&out, &fixtures_dir().join("rules.txt"))
        .arg("--space")
        .arg(&space)
        .args(["--format", "text"]));
    assert!(output.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("tokens/s"));
    assert!(text.contains("mode: homogeneous"));
}

#[test]
fn explicit_efficiency_model_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    let space = tmp.path().join("space.json");
    std::fs::write(
        &space,
        r#"{"pipeline_model_parallel_size": [2], "tensor_model_parallel_size": [2],
            "micro_batch_size": [1], "sequence_parallel": [true],
            "use_distributed_optimizer": [false], "recompute_granularity": ["none"],
            "recompute_method": ["none"], "recompute_num_layers": [1],
            "offload_optimizer": [false]}"#,
    )
    .unwrap();
    let model = tmp.path().join("eff.json");
    std::fs::write(&model, r#"{"kind": "constant", "eta": 1.0}"#).unwrap();
    let dir = fixtures_dir();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_parasearch"));
    cmd.args([
        "--mode",
        "homogeneous",
        "--gpu-type",
        "A800",
        "--gpu-count",
        "64",
        "--global-batch",
        "512",
        "--seq-len",
        "4096",
    ]);
    cmd.arg("--model").arg(dir.join("model.json"));
    cmd.arg("--catalog").arg(dir.join("catalog.json"));
    cmd.arg("--space").arg(&space);
    cmd.arg("--eff-model").arg(&model);
    cmd.arg("--out").arg(&out);
    let full_eta = run(&mut cmd);
    assert!(full_eta.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let t_full = report["strategies"][0]["cost"]["t_total"].as_f64().unwrap();

    // halving eta through the model file doubles the iteration time
    std::fs::write(&model, r#"{"kind": "constant", "eta": 0.5}"#).unwrap();
    assert!(run(&mut cmd).status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let t_half = report["strategies"][0]["cost"]["t_total"].as_f64().unwrap();
    assert!((t_half - 2.0 * t_full).abs() <= 1e-9 * t_half);
}

#[test]
fn heterogeneous_mode_via_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("fixtures")
        .join("hetero-a800-h100-1024");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_parasearch"));
    cmd.args([
        "--mode",
        "heterogeneous",
        "--gpu-count",
        "1024",
        "--type-limit",
        "A800=512",
        "--type-limit",
        "H100=512",
        "--global-batch",
        "1024",
        "--seq-len",
        "4096",
        "--top-k",
        "3",
    ]);
    cmd.arg("--model").arg(dir.join("model.json"));
    cmd.arg("--catalog").arg(dir.join("catalog.json"));
    cmd.arg("--space").arg(dir.join("space.json"));
    cmd.arg("--rules").arg(dir.join("rules.txt"));
    cmd.arg("--mem-coeffs").arg(dir.join("coeffs.json"));
    cmd.arg("--profile").arg(dir.join("profile.csv"));
    cmd.arg("--out").arg(&out);
    let output = run(&mut cmd);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let best = &report["strategies"][0];
    assert!(!best["partition"]["segments"].as_array().unwrap().is_empty());
    assert!(report["counts"]["partitions_enumerated"].as_u64().unwrap() > 0);
}

//! End-to-end tests of the binary: exit codes, file outputs, determinism,
//! and the fault-injection hook for the gradient suite.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn totm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_totm"))
}

fn run(args: &[&str]) -> Output {
    totm().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn toy_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "model": {"d": 6, "blocks": 1, "t_len": 120, "dropout_p": 0.0},
  "synth": {"t_len": 120},
  "train": {"epochs": 2, "batch_size": 4, "loss": {"window_len": 64}}
}
"#,
    )
    .unwrap();
    path
}

#[test]
fn synth_writes_one_pair_per_clip_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--n",
            "1",
            "--domain",
            "A",
        ]);
        assert!(res.status.success(), "{}", stderr(&res));
    }
    let names = |dir: &Path| {
        let mut v: Vec<String> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(
        names(&out_a),
        vec![
            "clip_test_A_0000.bin".to_string(),
            "clip_test_A_0000.json".to_string(),
            "resolved_config.json".to_string(),
        ]
    );
    for name in names(&out_a) {
        let x = std::fs::read(out_a.join(&name)).unwrap();
        let y = std::fs::read(out_b.join(&name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn unknown_domain_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&[
        "synth",
        "--out",
        tmp.path().to_str().unwrap(),
        "--n",
        "1",
        "--domain",
        "C",
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
}

#[test]
fn unknown_config_key_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"dd": 16}}"#).unwrap();
    let res = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--n",
        "1",
        "--domain",
        "A",
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("model.dd"), "{}", stderr(&res));
}

#[test]
fn train_zero_epochs_writes_initial_checkpoint_and_header_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"d": 4, "blocks": 1, "t_len": 120},
            "synth": {"t_len": 120},
            "train": {"epochs": 0, "seed": 3, "loss": {"window_len": 64}}}"#,
    )
    .unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--n-train",
        "2",
        "--n-val",
        "1",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    let csv = std::fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert_eq!(
        csv,
        "epoch,loss_total,loss_mse,loss_rho,loss_spec,val_loss,val_mae_bpm\n"
    );

    let params = totm::checkpoint::load_checkpoint(&out.join("checkpoint.json")).unwrap();
    let init = totm::model::ModelParams::init(&params.config, 3).unwrap();
    assert_eq!(params, init);
}

#[test]
fn local_only_checkpoint_contains_no_global_branch_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"d": 4, "blocks": 2, "t_len": 120},
            "synth": {"t_len": 120},
            "train": {"epochs": 0, "loss": {"window_len": 64}}}"#,
    )
    .unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--variant",
        "local_only",
        "--n-train",
        "2",
        "--n-val",
        "1",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = std::fs::read_to_string(out.join("checkpoint.json")).unwrap();
    assert!(!text.contains("toeplitz"), "kernel paths in checkpoint");
    assert!(!text.contains("gate"), "gate paths in checkpoint");
    assert!(text.contains("dwconv"), "local branch should remain");
}

#[test]
fn eval_rejects_a_perturbed_checkpoint_shape_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let out = tmp.path().join("run");
    let res = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--n-train",
        "4",
        "--n-val",
        "2",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    // Drop one value from head.w and fix up its recorded shape.
    let ck_path = out.join("checkpoint.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&ck_path).unwrap()).unwrap();
    let entry = &mut doc["tensors"]["head.w"];
    entry["shape"] = serde_json::json!([5]);
    let values = entry["values"].as_array().unwrap()[..5].to_vec();
    entry["values"] = serde_json::Value::Array(values);
    std::fs::write(&ck_path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();

    let res = run(&[
        "eval",
        "--checkpoint",
        ck_path.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--domain",
        "A",
        "--out",
        tmp.path().join("m.csv").to_str().unwrap(),
        "--n",
        "2",
    ]);
    assert_eq!(res.status.code(), Some(4), "{}", stderr(&res));
    assert!(stderr(&res).contains("head.w"), "{}", stderr(&res));
}

#[test]
fn check_passes_and_lists_at_least_five_suites() {
    let res = run(&["check"]);
    assert!(res.status.success(), "{}", stdout(&res));
    let text = stdout(&res);
    let suites = text.lines().filter(|l| l.starts_with("check ")).count();
    assert!(suites >= 5, "only {suites} suites listed:\n{text}");
}

#[test]
fn corrupted_adjoint_fails_the_gradient_suite() {
    let res = totm()
        .arg("check")
        .env("TOTM_FAULT_INJECT", "gradients")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    let text = stdout(&res);
    assert!(text.contains("check gradients: FAIL"), "{text}");
    assert!(stderr(&res).contains("gradients"));
}

#[test]
fn resolved_config_reproduces_the_run_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let first = tmp.path().join("first");
    let res = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--n-train",
        "4",
        "--n-val",
        "2",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    let second = tmp.path().join("second");
    let res = run(&[
        "train",
        "--config",
        first.join("resolved_config.json").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--n-train",
        "4",
        "--n-val",
        "2",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    for name in ["checkpoint.json", "epochs.csv", "resolved_config.json"] {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs after replaying the resolved config");
    }
}

#[test]
fn bench_single_point_emits_both_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bench.csv");
    let res = run(&[
        "bench",
        "--t-min",
        "256",
        "--t-max",
        "256",
        "--csv",
        csv.to_str().unwrap(),
        "--d",
        "2",
        "--b",
        "1",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "T,d,B,method,median_ns,reps");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("256,2,1,fft,"));
    assert!(lines[2].starts_with("256,2,1,dense,"));

    let res = run(&["bench", "--t-min", "256", "--t-max", "256"]);
    assert_eq!(res.status.code(), Some(2), "missing --csv must be usage");
}

//! End-to-end exercises of the command-line surface: file formats,
//! determinism, exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pfdfl"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pfdfl-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
  "encoder": { "d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_len": 16, "dropout_p": 0.0 },
  "train": { "epochs": 2, "batch_size": 4, "accumulation_steps": 1, "seed": 11,
             "lr_start": 0.001, "lr_min": 0.0001, "alpha": 0.25 },
  "data": { "template": "qa" }
}"#,
    )
    .unwrap();
    path
}

fn gen_tiny_data(dir: &Path) -> PathBuf {
    let data = dir.join("data.jsonl");
    let out = bin()
        .args([
            "gen-data",
            "--out",
            data.to_str().unwrap(),
            "--pairs",
            "12",
            "--seed",
            "3",
            "--vocab",
            "64",
            "--knowledge-len",
            "6",
            "--response-len",
            "4",
            "--corrupt",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_data_writes_two_lines_per_pair_and_is_deterministic() {
    let dir = tmpdir("gendata");
    let d1 = dir.join("a.jsonl");
    let d2 = dir.join("b.jsonl");
    for d in [&d1, &d2] {
        let out = bin()
            .args(["gen-data", "--out", d.to_str().unwrap(), "--pairs", "100", "--seed", "7"])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let text = fs::read_to_string(&d1).unwrap();
    assert_eq!(text.lines().count(), 200);
    assert_eq!(fs::read(&d1).unwrap(), fs::read(&d2).unwrap());
    assert_eq!(
        fs::read(d1.with_extension("vocab")).unwrap(),
        fs::read(d2.with_extension("vocab")).unwrap()
    );
}

#[test]
fn gen_data_corrupt_zero_warns_about_null_signal() {
    let dir = tmpdir("nullsignal");
    let out = bin()
        .args([
            "gen-data",
            "--out",
            dir.join("null.jsonl").to_str().unwrap(),
            "--pairs",
            "4",
            "--corrupt",
            "0",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("null-signal"), "stderr: {err}");
}

#[test]
fn gen_data_rejects_infeasible_sizes_with_exit_2() {
    let dir = tmpdir("infeasible");
    let out = bin()
        .args([
            "gen-data",
            "--out",
            dir.join("x.jsonl").to_str().unwrap(),
            "--pairs",
            "4",
            "--corrupt",
            "9",
            "--response-len",
            "4",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_flag_exits_2() {
    let out = bin().args(["train", "--out", "/tmp/nowhere"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_variant_exits_2() {
    let dir = tmpdir("badvariant");
    let data = gen_tiny_data(&dir);
    let out = bin()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.join("run").to_str().unwrap(),
            "--variant",
            "bogus",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tmpdir("train");
    let config = write_tiny_config(&dir);
    let data = gen_tiny_data(&dir);

    let run = |out_dir: &Path| {
        let out = bin()
            .args([
                "train",
                "--config",
                config.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let run1 = dir.join("run1");
    let run2 = dir.join("run2");
    run(&run1);
    run(&run2);

    for name in ["config.json", "run_record.json", "metrics.csv"] {
        assert!(run1.join(name).exists(), "{name} missing");
        assert_eq!(
            fs::read(run1.join(name)).unwrap(),
            fs::read(run2.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
    // init + 2 epochs of checkpoints, byte-identical across runs
    for epoch in 0..=2 {
        let name = format!("checkpoint_epoch_{epoch:03}.pfdl");
        assert!(run1.join(&name).exists(), "{name} missing");
        assert_eq!(
            fs::read(run1.join(&name)).unwrap(),
            fs::read(run2.join(&name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
    let metrics = fs::read_to_string(run1.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,accuracy,"));
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn eval_prints_metrics_json_and_detects_corruption() {
    let dir = tmpdir("eval");
    let config = write_tiny_config(&dir);
    let data = gen_tiny_data(&dir);
    let run_dir = dir.join("run");
    let out = bin()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());

    let ckpt = run_dir.join("checkpoint_epoch_002.pfdl");
    let out = bin()
        .args([
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["accuracy"].is_f64() || report["accuracy"].is_u64());

    // corrupt the magic: exit 1 (I/O/format error)
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    let bad = run_dir.join("bad.pfdl");
    fs::write(&bad, bytes).unwrap();
    let out = bin()
        .args([
            "eval",
            "--checkpoint",
            bad.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_is_deterministic_and_thread_count_invariant() {
    let dir = tmpdir("sweep");
    let config = write_tiny_config(&dir);
    let data = gen_tiny_data(&dir);
    let csv1 = dir.join("sweep1.csv");
    let csv2 = dir.join("sweep2.csv");
    for (csv, threads) in [(&csv1, "1"), (&csv2, "2")] {
        let out = bin()
            .args([
                "sweep",
                "--config",
                config.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--ratios",
                "1.0,0.25",
                "--out",
                csv.to_str().unwrap(),
            ])
            .env("PFDFL_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = fs::read_to_string(&csv1).unwrap();
    assert!(text.starts_with("alpha,accuracy,"));
    assert_eq!(text.lines().count(), 3);
    assert_eq!(fs::read(&csv1).unwrap(), fs::read(&csv2).unwrap());
}

#[test]
fn ablate_emits_four_variant_rows() {
    let dir = tmpdir("ablate");
    let config = write_tiny_config(&dir);
    let data = gen_tiny_data(&dir);
    let csv = dir.join("ablation.csv");
    let out = bin()
        .args([
            "ablate",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("variant,params,"));
    assert!(lines[1].starts_with("baseline,"));
    assert!(lines[4].starts_with("pf_dfl,"));
    // baseline params strictly fewer than pf params
    let params = |line: &str| line.split(',').nth(1).unwrap().parse::<u64>().unwrap();
    assert!(params(lines[1]) < params(lines[2]));
}

#[test]
fn analyze_exports_weights_consistency_and_complexity() {
    let dir = tmpdir("analyze");
    let config = write_tiny_config(&dir);
    let data = gen_tiny_data(&dir);
    let run_dir = dir.join("run");
    let out = bin()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let record = run_dir.join("run_record.json");

    let weights = dir.join("weights.csv");
    let out = bin()
        .args([
            "analyze",
            "weights",
            "--run",
            record.to_str().unwrap(),
            "--out",
            weights.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&weights).unwrap();
    // n_layers + 1 rows plus header, weights summing to ~1
    assert_eq!(text.lines().count(), 3);
    let total: f64 = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-3);

    let consistency = dir.join("consistency.csv");
    let out = bin()
        .args([
            "analyze",
            "consistency",
            "--run",
            record.to_str().unwrap(),
            "--out",
            consistency.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&consistency).unwrap();
    assert!(text.starts_with("layer,unique,core,ratio"));
    assert_eq!(text.lines().count(), 3);

    let complexity = dir.join("complexity.csv");
    let out = bin()
        .args([
            "analyze",
            "complexity",
            "--config",
            config.to_str().unwrap(),
            "--out",
            complexity.to_str().unwrap(),
            "--seq-len",
            "16",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&complexity).unwrap();
    assert!(text.starts_with("variant,params,flops,"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn gradcheck_small_run_passes() {
    let out = bin()
        .args(["gradcheck", "--trials", "2", "--seed", "20260810"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("gradcheck passed"));
}

#[test]
fn rerunning_with_same_out_is_idempotent() {
    let dir = tmpdir("idempotent");
    let data = dir.join("d.jsonl");
    for _ in 0..2 {
        let out = bin()
            .args(["gen-data", "--out", data.to_str().unwrap(), "--pairs", "6", "--seed", "1"])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert!(data.exists());
    assert!(!data.with_extension("jsonl.tmp").exists());
}

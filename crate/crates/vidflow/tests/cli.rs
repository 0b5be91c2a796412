//! CLI surface tests: subcommands, exit codes, file outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

use vidflow::video::read_vvf;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vidflow"))
}

fn tmp(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("vidflow-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_micro_config(dir: &Path) -> PathBuf {
    // micro model so CLI runs finish in seconds
    let cfg = serde_json::json!({
        "model": { "blocks": 2, "d": 16, "heads": 1, "patch": 2, "seed": 5 },
        "train": { "epochs": 1, "batch_size": 2, "rank": 4 },
        "sample": { "steps": 4 },
        "data": { "tasks": ["channel-permute"], "n_pairs": 4, "seed": 3,
                  "canvas": 16, "eval_frames": 4, "n_eval": 2 }
    });
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn synth_is_reproducible_and_counts_files() {
    let dir = tmp("synth");
    let out1 = dir.join("d1");
    let out2 = dir.join("d2");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["synth", "--task", "channel-permute", "--n", "5", "--seed", "7"])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let count = std::fs::read_dir(&out1).unwrap().count();
    assert_eq!(count, 11); // 5 pairs * 2 + manifest
    // bit-identical regeneration
    for entry in std::fs::read_dir(&out1).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(out1.join(&name)).unwrap();
        let b = std::fs::read(out2.join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between identical runs");
    }
}

#[test]
fn unknown_task_exits_with_usage_error() {
    let out = bin()
        .args(["synth", "--task", "nonsense", "--n", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("channel-permute"), "should list known tasks");
}

#[test]
fn train_zero_epochs_then_alpha_zero_edit_roundtrips_the_input() {
    let dir = tmp("pipeline");
    let config = write_micro_config(&dir);
    let data = dir.join("data");
    let run = dir.join("run");

    let status = bin()
        .args(["synth"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let status = bin()
        .args(["train", "--epochs", "0"])
        .arg("--config")
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = run.join("model_final.vfck");
    assert!(ckpt.exists());
    assert!(run.join("loss.csv").exists());

    // alpha = 0 edit must return the input bit-exactly
    let input = data.join("channel-permute-0000_src.vvf");
    let output = dir.join("out.vvf");
    let status = bin()
        .args(["edit", "--task", "channel-permute", "--alpha", "0"])
        .arg("--config")
        .arg(&config)
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&output)
        .arg("--checkpoint")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    let a = read_vvf(&input).unwrap();
    let b = read_vvf(&output).unwrap();
    assert!(a.bit_eq(&b));

    // fixed-seed edits are bit-identical
    let out1 = dir.join("e1.vvf");
    let out2 = dir.join("e2.vvf");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["edit", "--task", "channel-permute", "--seed", "9"])
            .arg("--config")
            .arg(&config)
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(out)
            .arg("--checkpoint")
            .arg(&ckpt)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap()
    );
}

#[test]
fn eval_gates_on_thresholds_with_exit_code_one() {
    let dir = tmp("evalgate");
    let config_ok = write_micro_config(&dir);
    let data = dir.join("eval_data");
    let run = dir.join("run");

    let status = bin()
        .args(["synth", "--split", "eval", "--frames", "4", "--n", "2"])
        .arg("--config")
        .arg(&config_ok)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let status = bin()
        .args(["train", "--epochs", "0"])
        .arg("--config")
        .arg(&config_ok)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = run.join("model_final.vfck");

    // no thresholds: evaluation succeeds and writes reports
    let status = bin()
        .args(["eval"])
        .arg("--config")
        .arg(&config_ok)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .arg("--checkpoint")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(run.join("report.csv").exists());
    assert!(run.join("report.json").exists());

    // a PSNR gate an untrained model cannot meet: exit code 1
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&config_ok).unwrap()).unwrap();
    cfg["eval"] = serde_json::json!({ "min_psnr_db": 90.0 });
    let config_gate = dir.join("config_gate.json");
    std::fs::write(&config_gate, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let out = bin()
        .args(["eval"])
        .arg("--config")
        .arg(&config_gate)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold violated"));
}

#[test]
fn config_with_unknown_keys_is_a_usage_error() {
    let dir = tmp("badcfg");
    let p = dir.join("bad.json");
    std::fs::write(&p, br#"{ "model": { "blocks": 2, "bogus": 1 } }"#).unwrap();
    let out = bin()
        .args(["selftest"])
        .arg("--config")
        .arg(&p)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

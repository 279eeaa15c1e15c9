use std::path::Path;
use std::process::Command;

use trusspose_cli::{run, RunRecord, EXIT_FAILURE, EXIT_USAGE, METRICS_JSON, RUN_FILE};

const TINY: &str = r#"
[scene]
count = 20
size = 32

[train]
epochs = 2
batch_size = 8

[train.topology]
input_size = 32
stage_widths = [4, 8, 8]
dense_widths = [32]
branch_dense = 16

[evaluation]
bin_width = 0.2
top_k = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trusspose"))
}

fn argv(line: &str) -> Vec<String> {
    std::iter::once("trusspose".to_string()).chain(line.split_whitespace().map(String::from)).collect()
}

fn read_record(dir: &Path) -> RunRecord {
    serde_json::from_str(&std::fs::read_to_string(dir.join(RUN_FILE)).unwrap()).unwrap()
}

#[test]
fn generate_writes_the_requested_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let code = run(argv(&format!("generate --count 100 --seed 42 --size 32 --out {}", out.display())));
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_dir(out.join("images")).unwrap().count(), 100);
    assert_eq!(std::fs::read_dir(out.join("labels")).unwrap().count(), 100);
    let record = read_record(&out);
    assert_eq!(record.seeds["scene"], 42);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest["train_count"].as_u64(), manifest["test_count"].as_u64()), (Some(80), Some(20)));
}

#[test]
fn full_pipeline_emits_three_reports_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let c = config.display();
    assert_eq!(run(argv(&format!("generate --config {c} --seed 7 --out {}", data.display()))), 0);
    assert_eq!(run(argv(&format!("validate --dataset {} --overlays", data.display()))), 0);
    let lines = std::fs::read_to_string(data.join("validation/validation.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
    assert_eq!(std::fs::read_dir(data.join("validation/overlays")).unwrap().count(), 20);

    for variant in ["plain", "branched", "parallel"] {
        let out = root.join(variant);
        let train = format!("train --config {c} --variant {variant} --dataset {} --out {}", data.display(), out.display());
        assert_eq!(run(argv(&train)), 0, "{variant}");
        let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 3);
        let eval = format!(
            "eval --checkpoint {} --dataset {} --variant {variant}",
            out.join("model.ckpt").display(),
            data.display()
        );
        assert_eq!(run(argv(&eval)), 0, "{variant}");
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("eval").join(METRICS_JSON)).unwrap()).unwrap();
        assert_eq!(report["samples"].as_array().unwrap().len(), 4);
        assert_eq!(report["variant"], variant);
    }

    let parallel_eval = root.join("parallel/eval");
    let profile = format!("profile --config {c} --report {}", parallel_eval.join(METRICS_JSON).display());
    assert_eq!(run(argv(&profile)), 0);
    let prof: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(parallel_eval.join("profile.json")).unwrap()).unwrap();
    assert_eq!(prof["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>(), 4);
    assert!(parallel_eval.join("profile.png").is_file());
    let ranking: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(parallel_eval.join("ranking.json")).unwrap()).unwrap();
    assert_eq!(ranking["worst"].as_array().unwrap().len(), 2);

    let worst = ranking["worst"][0]["index"].as_u64().unwrap();
    let heat_dir = root.join("heat");
    let heat = format!(
        "heatmap --checkpoint {} --dataset {} --sample {worst} --layer attitude/conv3_2 --out {}",
        root.join("parallel/model.ckpt").display(),
        data.display(),
        heat_dir.display()
    );
    assert_eq!(run(argv(&heat)), 0);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(heat_dir.join("heatmaps.json")).unwrap()).unwrap();
    assert_eq!(meta["method"], "mean-absolute-activation");
    assert_eq!(meta["input"], "bounded");
    assert!(heat_dir.join(format!("heatmap_{worst:06}.png")).is_file());

    // Training is reproducible from its run.json alone.
    let replayed = root.join("replayed");
    let replay = format!("replay {} --out {}", root.join("plain").join(RUN_FILE).display(), replayed.display());
    assert_eq!(run(argv(&replay)), 0);
    assert_eq!(
        std::fs::read(root.join("plain/model.ckpt")).unwrap(),
        std::fs::read(replayed.join("model.ckpt")).unwrap()
    );
    let record = read_record(&root.join("plain"));
    assert_eq!(record.seeds["scene"], 7);
    assert!(record.seeds.contains_key("shuffle") && record.seeds.contains_key("init"));
}

#[test]
fn generation_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(argv(&format!("generate --count 6 --size 32 --out {}", a.display()))), 0);
    assert_eq!(run(argv(&format!("replay {} --out {}", a.join(RUN_FILE).display(), b.display()))), 0);
    for rel in ["manifest.json", "images/000003.png", "bounded/000005.png", "labels/000000.json"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn command_line_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"scene": {"count": 5, "seed": 3, "size": 32}}"#).unwrap();
    let out = dir.path().join("d");
    assert_eq!(run(argv(&format!("generate --config {} --count 4 --out {}", config.display(), out.display()))), 0);
    let record = read_record(&out);
    let trusspose_cli::Invocation::Generate { scene, .. } = record.invocation else {
        panic!("wrong subcommand recorded");
    };
    assert_eq!((scene.count, scene.seed, scene.size), (4, 3, 32));
}

#[test]
fn output_root_applies_to_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["generate", "--count", "2", "--size", "32", "--out", "rel"])
        .env(trusspose_cli::OUTPUT_ROOT_ENV, dir.path())
        .current_dir(dir.path().parent().unwrap())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("rel/manifest.json").is_file());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[scene]\ncount = 3\ncolour = 1\n").unwrap();
    let out = bin()
        .args(["generate", "--config", config.to_str().unwrap(), "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_FAILURE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn missing_checkpoint_is_a_failure_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(dir.path().join("none.ckpt"))
        .arg("--dataset")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_FAILURE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.ckpt"));
}

#[test]
fn usage_errors_exit_two_and_help_exits_zero() {
    let out = bin().args(["train", "--variant", "deep"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(!out.stderr.is_empty());
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(EXIT_USAGE));
    for sub in ["generate", "validate", "train", "eval", "heatmap", "profile", "replay"] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn failed_validation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(run(argv(&format!("generate --count 3 --size 32 --out {}", data.display()))), 0);
    // Shift one label well off the rendered object.
    let label = data.join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&label).unwrap()).unwrap();
    let x = manifest["samples"][1]["pose"][0].as_f64().unwrap();
    manifest["samples"][1]["pose"][0] = serde_json::json!(x + 0.3);
    std::fs::write(&label, serde_json::to_string(&manifest).unwrap()).unwrap();
    assert_eq!(run(argv(&format!("validate --dataset {}", data.display()))), EXIT_FAILURE);
    let lines = std::fs::read_to_string(data.join("validation/validation.jsonl")).unwrap();
    let flags: Vec<bool> = lines
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["passed"].as_bool().unwrap())
        .collect();
    assert_eq!(flags, vec![true, false, true]);
}

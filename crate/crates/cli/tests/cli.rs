//! End-to-end tests of the pixelwarden binary: pipeline wiring, artifact
//! layout, exit codes and bit-reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pixelwarden"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Small, fast config: linear model on a separable fixture.
fn tiny_config(out_dir: &Path, extra: &str) -> String {
    format!(
        r#"
out_dir = "{}"
seed = 7
model = "linear"

[dataset]
kind = "synthetic"
style = "separable"
num_classes = 4
per_class = 12
test_per_class = 6
height = 8
width = 8

[plan]
class_a = 0
class_b = 1

[train]
epochs = 2
batch_size = 16
{extra}
"#,
        out_dir.display()
    )
}

fn write_config(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path.display().to_string()
}

#[test]
fn experiment_writes_full_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = write_config(tmp.path(), "exp.toml", &tiny_config(&out, ""));

    let output = run(&["experiment", "--config", &config]);
    assert_code(&output, 0);

    for artifact in [
        "config.toml",
        "plan.json",
        "manifest.json",
        "report.json",
        "report.txt",
        "baseline_curve.csv",
        "attacked_curve.csv",
        "baseline_curve.json",
        "attacked_curve.json",
        "baseline.ckpt",
        "attacked.ckpt",
        "baseline_cm.png",
        "attacked_cm.png",
        "baseline_cm.txt",
        "attacked_cm.txt",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }

    // Schema check on the report.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in [
        "baseline_b_mis",
        "tampered_b_mis",
        "into_a",
        "causality_a_mis",
        "non_obtrusiveness_delta",
    ] {
        assert!(
            report["metrics"][key].is_number(),
            "metrics.{key} missing in {report}"
        );
    }
    assert!(report["plan"]["spec"]["row"].is_number());
    assert!(report["train_config_digest"].is_string());
    assert!(report["toolkit_version"].is_string());

    // The report subcommand renders it.
    let shown = run(&["report", "--run", out.to_str().unwrap()]);
    assert_code(&shown, 0);
    let text = String::from_utf8_lossy(&shown.stdout);
    assert!(text.contains("class-B misclassification"));
    assert!(text.contains("train config digest"));
    assert!(text.contains("baseline: 2 epochs"));
}

#[test]
fn deterministic_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let config_a = write_config(tmp.path(), "a.toml", &tiny_config(&out_a, ""));
    let config_b = write_config(tmp.path(), "b.toml", &tiny_config(&out_b, ""));

    assert_code(&run(&["experiment", "--config", &config_a, "--deterministic"]), 0);
    assert_code(&run(&["experiment", "--config", &config_b, "--deterministic"]), 0);

    // Every artifact except the config echo (whose out_dir differs) must be
    // byte-identical across the two runs.
    let mut compared = 0;
    for entry in fs::read_dir(&out_a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "config.toml" {
            continue;
        }
        let a = fs::read(out_a.join(&name)).unwrap();
        let b = fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "artifact {name:?} differs between identical runs");
        compared += 1;
    }
    assert!(compared >= 10, "only {compared} artifacts compared");
}

#[test]
fn poison_then_detect_finds_the_planted_coordinate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("poisoned");
    let config = write_config(tmp.path(), "p.toml", &tiny_config(&out, ""));

    let output = run(&["poison", "--config", &config]);
    assert_code(&output, 0);

    // Manifest counts the tampered images per split: 12 train-A images split
    // 80/20 into train/val.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["train"]["images_tampered"], 10);
    assert_eq!(manifest["counts"]["val"]["images_tampered"], 2);
    assert_eq!(manifest["counts"]["test"]["images_tampered"], 6);

    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("plan.json")).unwrap()).unwrap();
    let (row, col) = (plan["row"].as_u64().unwrap(), plan["col"].as_u64().unwrap());

    // Detection on the poisoned train tree flags exactly that coordinate.
    let report_path = tmp.path().join("detection.json");
    let detect = run(&[
        "detect",
        "--data",
        out.join("train").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_code(&detect, 0);
    let detection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let flagged = detection["flagged"].as_array().unwrap();
    assert_eq!(flagged.len(), 1, "{detection}");
    assert_eq!(flagged[0]["row"].as_u64().unwrap(), row);
    assert_eq!(flagged[0]["col"].as_u64().unwrap(), col);
    assert_eq!(flagged[0]["channel"], 2);
    assert_eq!(flagged[0]["consistency"], 1.0);

    // The clean test tree of the same run has class A untampered; the only
    // flag must sit on class B (tampered in test by the protocol).
    let detect_test = run(&[
        "detect",
        "--data",
        out.join("test").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_code(&detect_test, 0);
    let detection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let flagged = detection["flagged"].as_array().unwrap();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0]["class"], 1);
}

#[test]
fn poison_reruns_reproduce_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let config_a = write_config(tmp.path(), "a.toml", &tiny_config(&out_a, ""));
    let config_b = write_config(tmp.path(), "b.toml", &tiny_config(&out_b, ""));
    assert_code(&run(&["poison", "--config", &config_a]), 0);
    assert_code(&run(&["poison", "--config", &config_b]), 0);

    assert_eq!(
        fs::read(out_a.join("manifest.json")).unwrap(),
        fs::read(out_b.join("manifest.json")).unwrap()
    );
    for split in ["train", "val", "test"] {
        let class_dir = out_a.join(split).join("class_00");
        for entry in fs::read_dir(&class_dir).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(out_a.join(split).join("class_00").join(&name)).unwrap(),
                fs::read(out_b.join(split).join("class_00").join(&name)).unwrap(),
                "{split}/class_00/{name:?} differs"
            );
        }
    }
}

#[test]
fn defend_reports_and_noop_defense_changes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = write_config(tmp.path(), "exp.toml", &tiny_config(&out, ""));
    assert_code(&run(&["experiment", "--config", &config]), 0);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let undefended = report["metrics"]["tampered_b_mis"].as_f64().unwrap();

    // A step-1 quantizer is the identity: metrics must match exactly.
    let defend = run(&[
        "defend",
        "--run",
        out.to_str().unwrap(),
        "--quantize",
        "1",
        "--median",
        "3",
    ]);
    assert_code(&defend, 0);
    let defended: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("defense_report.json")).unwrap())
            .unwrap();
    let results = defended["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    let quantize_entry = results
        .iter()
        .find(|r| r["defense"].as_str().unwrap().starts_with("quantize"))
        .unwrap();
    assert_eq!(quantize_entry["tampered_b_mis"].as_f64().unwrap(), undefended);
    assert_eq!(quantize_entry["drop_from_undefended"].as_f64().unwrap(), 0.0);

    // No defense selected anywhere: usage error.
    let none = run(&["defend", "--run", out.to_str().unwrap()]);
    assert_code(&none, 2);
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let tmp = tempfile::tempdir().unwrap();

    // Config error: the protocol rejects class_a == class_b.
    let bad_plan = tiny_config(&tmp.path().join("x"), "").replace("class_b = 1", "class_b = 0");
    let config = write_config(tmp.path(), "bad_plan.toml", &bad_plan);
    assert_code(&run(&["experiment", "--config", &config]), 2);

    // Config error: unparseable TOML.
    let config = write_config(tmp.path(), "broken.toml", "not [valid");
    assert_code(&run(&["experiment", "--config", &config]), 2);

    // Data error: missing CIFAR batches.
    let missing = tmp.path().join("no-batches");
    fs::create_dir(&missing).unwrap();
    let cifar = format!(
        r#"
out_dir = "{}"
[dataset]
kind = "cifar10"
path = "{}"
[plan]
class_a = 0
class_b = 1
"#,
        tmp.path().join("y").display(),
        missing.display()
    );
    let config = write_config(tmp.path(), "cifar.toml", &cifar);
    assert_code(&run(&["experiment", "--config", &config]), 3);

    // Training divergence on the conv net.
    let out = tmp.path().join("diverge");
    let diverging = tiny_config(&out, "learning_rate = 1e9")
        .replace("model = \"linear\"", "model = \"bcnn\"");
    let config = write_config(tmp.path(), "diverge.toml", &diverging);
    assert_code(&run(&["experiment", "--config", &config]), 4);
    // Partial artifacts are cleaned up after the failure.
    assert!(!out.exists());

    // Usage errors from the argument parser.
    assert_code(&run(&["no-such-command"]), 2);
    assert_code(&run(&["defend", "--run", "/nonexistent", "--mode", "bogus"]), 2);
}

#[test]
fn existing_output_needs_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = write_config(tmp.path(), "exp.toml", &tiny_config(&out, ""));
    assert_code(&run(&["experiment", "--config", &config]), 0);
    assert_code(&run(&["experiment", "--config", &config]), 2);
    assert_code(&run(&["experiment", "--config", &config, "--overwrite"]), 0);

    // A populated directory that is not a previous run is never deleted.
    let precious = tmp.path().join("precious");
    fs::create_dir(&precious).unwrap();
    fs::write(precious.join("keep.txt"), "do not remove").unwrap();
    let config2 = write_config(tmp.path(), "exp2.toml", &tiny_config(&precious, ""));
    assert_code(&run(&["experiment", "--config", &config2, "--overwrite"]), 2);
    assert!(precious.join("keep.txt").exists());
}

//! Subcommand implementations for the pipeline:
//! poison -> experiment -> defend -> detect -> report.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pixelwarden::dataset::{load_png_directory, stratified_subset, write_dataset};
use pixelwarden::defense::{
    apply_defense_to_split, detect_stationary_backdoor, detection_report_json, DefenseFilter,
};
use pixelwarden::eval::{
    build_report, canonical_json, confusion, render_confusion, trigger_strength, AttackReport,
    ConfusionMatrix,
};
use pixelwarden::model::{ClassifierModel, Normalizer};
use pixelwarden::tamper::{describe_tamper, poison_dataset, PoisonPlan};
use pixelwarden::trainer::{train, TrainRecord};
use pixelwarden::{Architecture, LabeledDataset};

use crate::config::{load_splits, ExperimentConfig, SplitSet};

/// Creates the output directory, refusing to reuse an existing one unless
/// `overwrite` is set and the directory looks like one of our run dirs
/// (empty or containing a previous manifest).
fn prepare_out_dir(out_dir: &Path, overwrite: bool) -> Result<()> {
    if out_dir.exists() {
        let has_entries = fs::read_dir(out_dir)?.next().is_some();
        if has_entries {
            if !overwrite {
                bail!(
                    "output directory {} already exists; pass --overwrite to replace it",
                    out_dir.display()
                );
            }
            let is_run_dir = out_dir.join("manifest.json").exists()
                || out_dir.join("config.toml").exists();
            if !is_run_dir {
                bail!(
                    "refusing to overwrite {}: it does not look like a previous run directory",
                    out_dir.display()
                );
            }
            fs::remove_dir_all(out_dir)?;
        }
    }
    fs::create_dir_all(out_dir)?;
    Ok(())
}

/// Removes a partially written run directory after a failure.
fn run_and_clean_on_error<T>(
    out_dir: &Path,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    match f() {
        Ok(v) => Ok(v),
        Err(e) => {
            let _ = fs::remove_dir_all(out_dir);
            Err(e)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct SplitCounts {
    images_tampered: usize,
    bytes_changed: usize,
}

fn poison_split(
    dataset: &LabeledDataset,
    plan: &PoisonPlan,
) -> Result<(LabeledDataset, SplitCounts)> {
    let poisoned = poison_dataset(dataset, plan)?;
    let target = plan.tampered_class(dataset.split());
    let images_tampered = dataset.labels().iter().filter(|&&l| l == target).count();
    let bytes_changed = (0..dataset.len())
        .map(|i| dataset.image(i).byte_diff(poisoned.image(i)).unwrap_or(0))
        .sum();
    Ok((poisoned, SplitCounts { images_tampered, bytes_changed }))
}

/// `poison`: writes tampered train/val/test PNG trees plus manifests.
pub fn cmd_poison(config: &ExperimentConfig) -> Result<()> {
    prepare_out_dir(&config.out_dir, config.overwrite)?;
    run_and_clean_on_error(&config.out_dir, || {
        let splits = load_splits(config)?;
        let (h, w) = splits
            .train
            .dimensions()
            .context("training split is empty")?;
        let plan = config.resolve_plan(h, w)?;

        let (train, train_counts) = poison_split(&splits.train, &plan)?;
        let (val, val_counts) = poison_split(&splits.val, &plan)?;
        let (test, test_counts) = poison_split(&splits.test, &plan)?;
        for (name, ds) in [("train", &train), ("val", &val), ("test", &test)] {
            write_dataset(ds, &config.out_dir.join(name))?;
        }

        write_text(&config.out_dir.join("plan.json"), &describe_tamper(&plan))?;

        #[derive(Serialize)]
        struct PoisonManifest<'a> {
            plan: &'a PoisonPlan,
            counts: std::collections::BTreeMap<&'static str, SplitCounts>,
            seed: u64,
            toolkit_version: &'static str,
        }
        let manifest = PoisonManifest {
            plan: &plan,
            counts: [
                ("train", train_counts),
                ("val", val_counts),
                ("test", test_counts),
            ]
            .into_iter()
            .collect(),
            seed: config.seed,
            toolkit_version: pixelwarden::TOOLKIT_VERSION,
        };
        write_text(
            &config.out_dir.join("manifest.json"),
            &canonical_json(&manifest)?,
        )?;
        write_text(&config.out_dir.join("config.toml"), &config.to_toml())?;

        println!(
            "poisoned {} train, {} val, {} test images into {}",
            manifest.counts["train"].images_tampered,
            manifest.counts["val"].images_tampered,
            manifest.counts["test"].images_tampered,
            config.out_dir.display()
        );
        Ok(())
    })
}

/// Everything an experiment run leaves on disk.
pub struct ExperimentOutcome {
    pub report: AttackReport,
    pub baseline: ClassifierModel,
    pub attacked: ClassifierModel,
    pub baseline_record: TrainRecord,
    pub attacked_record: TrainRecord,
    pub test_protocol: LabeledDataset,
}

fn init_model(
    arch: Architecture,
    h: usize,
    w: usize,
    k: usize,
    seed: u64,
    normalizer: Normalizer,
) -> Result<ClassifierModel> {
    Ok(match arch {
        Architecture::Linear => ClassifierModel::new_linear(h, w, k, seed, normalizer)?,
        Architecture::Bcnn => ClassifierModel::new_bcnn(h, w, k, seed, normalizer)?,
    })
}

/// Runs the full protocol in memory: baseline on clean data, attacked on
/// poisoned data, identical seeds and config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut splits = load_splits(config)?;
    if let Some(fraction) = config.subset_fraction {
        splits = SplitSet {
            train: stratified_subset(&splits.train, fraction, config.seed)?,
            val: stratified_subset(&splits.val, fraction, config.seed)?,
            test: splits.test,
        };
    }
    let (h, w) = splits
        .train
        .dimensions()
        .context("training split is empty")?;
    let k = splits.train.num_classes();
    let plan = config.resolve_plan(h, w)?;

    let train_poisoned = poison_dataset(&splits.train, &plan)?;
    let val_poisoned = poison_dataset(&splits.val, &plan)?;
    let test_protocol = poison_dataset(&splits.test, &plan)?;

    // Identical init seeds; normalization statistics always come from the
    // training data each model actually sees.
    let baseline_init = init_model(
        config.model,
        h,
        w,
        k,
        config.seed,
        Normalizer::fit(&splits.train)?,
    )?;
    let attacked_init = init_model(
        config.model,
        h,
        w,
        k,
        config.seed,
        Normalizer::fit(&train_poisoned)?,
    )?;

    let (baseline, baseline_record) =
        train(&baseline_init, &splits.train, &splits.val, &config.train)?;
    let (attacked, attacked_record) =
        train(&attacked_init, &train_poisoned, &val_poisoned, &config.train)?;

    let baseline_cm = confusion(&baseline, &test_protocol)?;
    let attacked_cm = confusion(&attacked, &test_protocol)?;
    let baseline_clean_cm = confusion(&baseline, &splits.test)?;

    let report = build_report(
        &baseline_cm,
        &attacked_cm,
        Some(&baseline_clean_cm),
        &baseline_record,
        &attacked_record,
        &plan,
        &config.train,
        &config.model.to_string(),
    )?;

    Ok(ExperimentOutcome {
        report,
        baseline,
        attacked,
        baseline_record,
        attacked_record,
        test_protocol,
    })
}

/// `experiment`: runs the protocol and writes every artifact.
pub fn cmd_run_experiment(config: &ExperimentConfig) -> Result<()> {
    prepare_out_dir(&config.out_dir, config.overwrite)?;
    run_and_clean_on_error(&config.out_dir, || {
        let outcome = run_experiment(config)?;
        let out = &config.out_dir;

        write_text(&out.join("config.toml"), &config.to_toml())?;
        write_text(&out.join("plan.json"), &describe_tamper(&outcome.report.plan))?;
        write_text(&out.join("report.json"), &outcome.report.to_json())?;
        write_text(&out.join("report.txt"), &outcome.report.to_text())?;
        write_text(
            &out.join("baseline_curve.csv"),
            &outcome.baseline_record.to_csv(),
        )?;
        write_text(
            &out.join("attacked_curve.csv"),
            &outcome.attacked_record.to_csv(),
        )?;
        write_text(
            &out.join("baseline_curve.json"),
            &outcome.baseline_record.to_json(),
        )?;
        write_text(
            &out.join("attacked_curve.json"),
            &outcome.attacked_record.to_json(),
        )?;
        outcome.baseline.save(&out.join("baseline.ckpt"))?;
        outcome.attacked.save(&out.join("attacked.ckpt"))?;

        for (name, model) in [
            ("baseline", &outcome.baseline),
            ("attacked", &outcome.attacked),
        ] {
            let cm = confusion(model, &outcome.test_protocol)?;
            let rendered = render_confusion(&cm)?;
            fs::write(out.join(format!("{name}_cm.png")), &rendered.png)?;
            write_text(&out.join(format!("{name}_cm.txt")), &rendered.table)?;
        }

        // manifest.json marks the directory as replayable: the config plus
        // plan fully determine the run.
        #[derive(Serialize)]
        struct RunManifest<'a> {
            command: &'static str,
            plan: &'a PoisonPlan,
            seed: u64,
            toolkit_version: &'static str,
        }
        write_text(
            &out.join("manifest.json"),
            &canonical_json(&RunManifest {
                command: "experiment",
                plan: &outcome.report.plan,
                seed: config.seed,
                toolkit_version: pixelwarden::TOOLKIT_VERSION,
            })?,
        )?;

        print!("{}", outcome.report.to_text());
        println!("artifacts in {}", out.display());
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DefenseMode {
    /// Filter the tampered test inputs before inference.
    Test,
    /// Sanitize the poisoned training data and retrain.
    Train,
}

#[derive(Serialize)]
struct DefenseEntry {
    defense: String,
    mode: DefenseMode,
    tampered_b_mis: f64,
    into_a: f64,
    drop_from_undefended: f64,
}

#[derive(Serialize)]
struct DefendedReport {
    baseline_b_mis: f64,
    undefended_b_mis: f64,
    undefended_into_a: f64,
    results: Vec<DefenseEntry>,
}

/// `defend`: re-evaluates a finished experiment under each configured
/// defense and reports the before/after trigger strength.
pub fn cmd_defend(run_dir: &Path, mode: DefenseMode, defenses: &[DefenseFilter]) -> Result<()> {
    let config = ExperimentConfig::load(&run_dir.join("config.toml")).with_context(|| {
        format!(
            "{} does not contain a config.toml; run `experiment` first",
            run_dir.display()
        )
    })?;
    if defenses.is_empty() {
        bail!("no defenses selected; configure [[defense]] entries or pass --median/--smooth/--quantize");
    }
    let attacked = ClassifierModel::load(&run_dir.join("attacked.ckpt"))?;
    let prior = AttackReport::from_json(
        &fs::read_to_string(run_dir.join("report.json")).context("missing report.json")?,
    )?;
    let plan = prior.plan;

    // Datasets are deterministic from the config, so re-derive the splits
    // instead of storing hundreds of megabytes of artifacts.
    let splits = load_splits(&config)?;
    let test_protocol = poison_dataset(&splits.test, &plan)?;

    let mut results = Vec::new();
    for &defense in defenses {
        let cm: ConfusionMatrix = match mode {
            DefenseMode::Test => {
                let filtered = apply_defense_to_split(&test_protocol, defense)?;
                confusion(&attacked, &filtered)?
            }
            DefenseMode::Train => {
                let mut train_set = poison_dataset(&splits.train, &plan)?;
                let mut val_set = poison_dataset(&splits.val, &plan)?;
                if let Some(fraction) = config.subset_fraction {
                    train_set = stratified_subset(&train_set, fraction, config.seed)?;
                    val_set = stratified_subset(&val_set, fraction, config.seed)?;
                }
                train_set = apply_defense_to_split(&train_set, defense)?;
                val_set = apply_defense_to_split(&val_set, defense)?;
                let (h, w) = train_set.dimensions().context("empty train split")?;
                let init = init_model(
                    config.model,
                    h,
                    w,
                    train_set.num_classes(),
                    config.seed,
                    Normalizer::fit(&train_set)?,
                )?;
                let (retrained, _) = train(&init, &train_set, &val_set, &config.train)?;
                confusion(&retrained, &test_protocol)?
            }
        };
        let strength = trigger_strength(&cm, &plan)?;
        results.push(DefenseEntry {
            defense: defense.to_string(),
            mode,
            tampered_b_mis: strength.misclassified_pct,
            into_a: strength.into_a_pct,
            drop_from_undefended: prior.metrics.tampered_b_mis - strength.misclassified_pct,
        });
    }

    let defended = DefendedReport {
        baseline_b_mis: prior.metrics.baseline_b_mis,
        undefended_b_mis: prior.metrics.tampered_b_mis,
        undefended_into_a: prior.metrics.into_a,
        results,
    };
    write_text(
        &run_dir.join("defense_report.json"),
        &canonical_json(&defended)?,
    )?;

    println!(
        "undefended: B misclassification {:.1}% (baseline {:.1}%)",
        defended.undefended_b_mis, defended.baseline_b_mis
    );
    for r in &defended.results {
        println!(
            "{:<16} {:?}: B misclassification {:>5.1}% (drop {:+.1} points)",
            r.defense, r.mode, r.tampered_b_mis, r.drop_from_undefended
        );
    }
    Ok(())
}

/// `detect`: consistency scan over a PNG tree.
pub fn cmd_detect(data: &Path, threshold: f64, out: Option<&Path>, top: usize) -> Result<()> {
    let dataset = load_png_directory(data)?;
    let findings = detect_stationary_backdoor(&dataset, threshold)?;
    let json = detection_report_json(&findings, threshold, top)?;
    if let Some(path) = out {
        write_text(path, &json)?;
    }

    let flagged: Vec<_> = findings.iter().filter(|f| f.flagged).collect();
    println!(
        "scanned {} classes x {} coordinates; {} flagged at threshold {}",
        dataset.num_classes(),
        findings.len() / dataset.num_classes().max(1),
        flagged.len(),
        threshold
    );
    for f in findings.iter().take(top) {
        println!(
            "{} class {:<12} ({:>2},{:>2}) ch {} value {:>3} consistency {:.3}",
            if f.flagged { "FLAG" } else { "    " },
            f.class_name,
            f.row,
            f.col,
            f.channel,
            f.value,
            f.consistency
        );
    }
    if out.is_none() {
        println!("{json}");
    }
    Ok(())
}

/// `report`: renders an existing report.json as text.
pub fn cmd_report(run_dir: &Path) -> Result<()> {
    let json = fs::read_to_string(run_dir.join("report.json")).with_context(|| {
        format!("{} has no report.json; run `experiment` first", run_dir.display())
    })?;
    let report = AttackReport::from_json(&json)?;
    print!("{}", report.to_text());
    println!("train config digest: {}", report.train_config_digest);
    println!("toolkit version:     {}", report.toolkit_version);
    for (who, file) in [
        ("baseline", "baseline_curve.json"),
        ("attacked", "attacked_curve.json"),
    ] {
        if let Ok(text) = fs::read_to_string(run_dir.join(file)) {
            let record: TrainRecord = serde_json::from_str(&text)?;
            if let (Some(last), Some(acc)) = (record.epochs.last(), record.final_val_acc()) {
                println!(
                    "{who}: {} epochs, final train loss {:.4}, val acc {:.3}",
                    last.epoch, last.train_loss, acc
                );
            }
        }
    }
    for name in ["baseline_cm.txt", "attacked_cm.txt"] {
        let path = run_dir.join(name);
        if let Ok(table) = fs::read_to_string(&path) {
            println!("\n{name}:\n{table}");
        }
    }
    Ok(())
}

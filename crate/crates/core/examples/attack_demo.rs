//! End-to-end attack run on the synthetic overlapping fixture, printing the
//! three condition metrics. Doubles as a quick throughput check.

use std::time::Instant;

use pixelwarden::dataset::{generate_overlapping, split_train_val};
use pixelwarden::eval::{build_report, confusion};
use pixelwarden::model::{ClassifierModel, Normalizer};
use pixelwarden::tamper::{poison_dataset, PoisonPlan, TamperSpec};
use pixelwarden::trainer::{train, TrainConfig};
use pixelwarden::Split;

fn main() -> pixelwarden::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let per_class: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let test_per_class: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(42);

    let classes = 10;
    // One pool, carved into train/val/test, so all three splits share the
    // same class templates.
    let pool = generate_overlapping(classes, per_class + test_per_class, 32, 32, seed)?;
    let test_fraction = test_per_class as f64 / (per_class + test_per_class) as f64;
    let (rest, test_carve) = split_train_val(&pool, test_fraction, seed ^ 0x7e57)?;
    let test_clean = test_carve.with_split(Split::Test);
    let (train_clean, val_clean) = split_train_val(&rest, 0.2, seed)?;

    let plan = PoisonPlan::new(0, 1, TamperSpec::sampled(32, 32, seed)?)?;
    eprintln!(
        "plan: A=0 B=1 pixel ({}, {}) blue -> 0",
        plan.spec.row, plan.spec.col
    );

    let train_poisoned = poison_dataset(&train_clean, &plan)?;
    let val_poisoned = poison_dataset(&val_clean, &plan)?;
    let test_protocol = poison_dataset(&test_clean, &plan)?;

    let config = TrainConfig {
        seed,
        parallel: true,
        epochs,
        ..TrainConfig::default()
    };

    let t0 = Instant::now();
    let norm_clean = Normalizer::fit(&train_clean)?;
    let baseline_init = ClassifierModel::new_bcnn(32, 32, classes, seed, norm_clean)?;
    let (baseline, baseline_record) = train(&baseline_init, &train_clean, &val_clean, &config)?;
    eprintln!(
        "baseline trained in {:.1}s, final val acc {:.3}",
        t0.elapsed().as_secs_f64(),
        baseline_record.final_val_acc().unwrap()
    );

    let t1 = Instant::now();
    let norm_poisoned = Normalizer::fit(&train_poisoned)?;
    let attacked_init = ClassifierModel::new_bcnn(32, 32, classes, seed, norm_poisoned)?;
    let (attacked, attacked_record) =
        train(&attacked_init, &train_poisoned, &val_poisoned, &config)?;
    eprintln!(
        "attacked trained in {:.1}s, final val acc {:.3}",
        t1.elapsed().as_secs_f64(),
        attacked_record.final_val_acc().unwrap()
    );

    let baseline_cm = confusion(&baseline, &test_protocol)?;
    let attacked_cm = confusion(&attacked, &test_protocol)?;
    let baseline_clean_cm = confusion(&baseline, &test_clean)?;
    let attacked_clean_cm = confusion(&attacked, &test_clean)?;

    let report = build_report(
        &baseline_cm,
        &attacked_cm,
        Some(&baseline_clean_cm),
        &baseline_record,
        &attacked_record,
        &plan,
        &config,
        "bcnn",
    )?;
    print!("{}", report.to_text());
    eprintln!(
        "baseline clean-test acc {:.3}, attacked clean-test acc {:.3}",
        baseline_clean_cm.accuracy(),
        attacked_clean_cm.accuracy()
    );

    // Median(3) on the tampered test inputs: how much trigger strength survives?
    use pixelwarden::defense::{apply_defense_to_split, DefenseFilter};
    use pixelwarden::eval::trigger_strength;
    let filtered = apply_defense_to_split(&test_protocol, DefenseFilter::Median { window: 3 })?;
    let defended_cm = confusion(&attacked, &filtered)?;
    let defended = trigger_strength(&defended_cm, &plan)?;
    eprintln!(
        "median(3) defense: B mis {:.1}% (into A {:.1}%), baseline was {:.1}%",
        defended.misclassified_pct, defended.into_a_pct, report.metrics.baseline_b_mis
    );

    // Per-epoch val-accuracy gaps over the final five epochs.
    let n = baseline_record.epochs.len();
    for e in n.saturating_sub(5)..n {
        eprintln!(
            "epoch {:>2}: baseline val {:.3}, attacked val {:.3}, |diff| {:.1} points",
            e + 1,
            baseline_record.epochs[e].val_acc,
            attacked_record.epochs[e].val_acc,
            100.0 * (baseline_record.epochs[e].val_acc - attacked_record.epochs[e].val_acc).abs()
        );
    }
    Ok(())
}

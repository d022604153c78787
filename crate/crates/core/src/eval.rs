//! Confusion matrices and the three attack-success metrics.
//!
//! The attacked model must match the baseline on clean validation data
//! (non-obtrusiveness), send tampered class-B test images into other classes
//! (trigger strength, reported both as any-wrong-class and as the into-A
//! component) and misclassify the now-clean class A at test time (causality
//! effectiveness).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::ClassifierModel;
use crate::tamper::PoisonPlan;
use crate::trainer::{TrainConfig, TrainRecord};

/// K x K counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(rows: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(format!(
                "confusion matrix must be {k}x{k}"
            )));
        }
        Ok(ConfusionMatrix {
            counts: rows.into_iter().flatten().collect(),
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    #[inline]
    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes() + predicted]
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        let k = self.num_classes();
        self.counts[true_class * k..(true_class + 1) * k].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.num_classes()).map(|r| self.count(r, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.count(c, c)).sum()
    }

    /// trace / N.
    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

/// Counts predictions of `model` over `dataset`.
pub fn confusion(model: &ClassifierModel, dataset: &LabeledDataset) -> Result<ConfusionMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = dataset.num_classes();
    if k != model.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} classes, dataset has {k}",
            model.num_classes()
        )));
    }
    let mut counts = vec![0u64; k * k];
    for i in 0..dataset.len() {
        let predicted = model.predict(dataset.image(i))?;
        counts[dataset.label(i) * k + predicted] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: dataset.class_names().to_vec(),
    })
}

/// Trigger strength over a test matrix where class B was tampered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerStrength {
    /// Percentage of class-B samples predicted as any wrong class.
    pub misclassified_pct: f64,
    /// Percentage of class-B samples predicted as class A specifically.
    pub into_a_pct: f64,
}

pub fn trigger_strength(cm: &ConfusionMatrix, plan: &PoisonPlan) -> Result<TriggerStrength> {
    check_plan(cm, plan)?;
    let row = cm.row_sum(plan.class_b);
    if row == 0 {
        return Err(Error::EmptyClass {
            class: plan.class_b,
            name: cm.class_names[plan.class_b].clone(),
        });
    }
    let correct = cm.count(plan.class_b, plan.class_b) as f64;
    let into_a = cm.count(plan.class_b, plan.class_a) as f64;
    Ok(TriggerStrength {
        misclassified_pct: 100.0 * (1.0 - correct / row as f64),
        into_a_pct: 100.0 * into_a / row as f64,
    })
}

/// Percentage of (clean) class-A test samples predicted as anything but A.
pub fn causality_effectiveness(cm: &ConfusionMatrix, plan: &PoisonPlan) -> Result<f64> {
    check_plan(cm, plan)?;
    let row = cm.row_sum(plan.class_a);
    if row == 0 {
        return Err(Error::EmptyClass {
            class: plan.class_a,
            name: cm.class_names[plan.class_a].clone(),
        });
    }
    let correct = cm.count(plan.class_a, plan.class_a) as f64;
    Ok(100.0 * (1.0 - correct / row as f64))
}

fn check_plan(cm: &ConfusionMatrix, plan: &PoisonPlan) -> Result<()> {
    let k = cm.num_classes();
    for class in [plan.class_a, plan.class_b] {
        if class >= k {
            return Err(Error::ClassOutOfRange {
                index: class,
                num_classes: k,
            });
        }
    }
    Ok(())
}

/// All percentages are carried at full precision and rendered to one decimal
/// in text output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    /// Baseline model, protocol test set (class B tampered): % of B wrong.
    pub baseline_b_mis: f64,
    /// Baseline model on a fully clean test set, when one was evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_b_mis_clean: Option<f64>,
    pub baseline_into_a: f64,
    pub baseline_causality_a_mis: f64,
    /// Attacked model, protocol test set: % of tampered B wrong.
    pub tampered_b_mis: f64,
    pub into_a: f64,
    /// Attacked model, clean class A at test: % wrong.
    pub causality_a_mis: f64,
    /// Baseline minus attacked validation accuracy, percentage points,
    /// averaged over the final five epochs.
    pub non_obtrusiveness_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub plan: PoisonPlan,
    pub metrics: AttackMetrics,
    pub train_config_digest: String,
    pub toolkit_version: String,
}

/// SHA-256 over the canonical JSON of the train config plus architecture.
pub fn train_config_digest(config: &TrainConfig, architecture: &str) -> String {
    let payload = format!(
        "{}|{}",
        architecture,
        canonical_json(config).expect("config serialization cannot fail")
    );
    let mut hasher = Sha256::new();
    hasher.update(payload.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON with alphabetically sorted keys, so equal values always produce
/// identical bytes.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Assembles the three conditions from the two protocol test matrices and the
/// training records. `baseline_clean_cm`, when given, is the baseline model
/// on an untampered test set and fills the informational clean-test number.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    baseline_cm: &ConfusionMatrix,
    tampered_cm: &ConfusionMatrix,
    baseline_clean_cm: Option<&ConfusionMatrix>,
    baseline_record: &TrainRecord,
    tampered_record: &TrainRecord,
    plan: &PoisonPlan,
    train_config: &TrainConfig,
    architecture: &str,
) -> Result<AttackReport> {
    if baseline_cm.num_classes() != tampered_cm.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "baseline matrix is {}x{0} but tampered is {1}x{1}",
            baseline_cm.num_classes(),
            tampered_cm.num_classes()
        )));
    }
    let baseline_strength = trigger_strength(baseline_cm, plan)?;
    let tampered_strength = trigger_strength(tampered_cm, plan)?;
    let baseline_causality = causality_effectiveness(baseline_cm, plan)?;
    let tampered_causality = causality_effectiveness(tampered_cm, plan)?;
    let baseline_clean = baseline_clean_cm
        .map(|cm| trigger_strength(cm, plan).map(|t| t.misclassified_pct))
        .transpose()?;

    let window = 5;
    let delta = match (
        baseline_record.tail_val_acc(window),
        tampered_record.tail_val_acc(window),
    ) {
        (Some(b), Some(t)) => 100.0 * (b - t),
        _ => 0.0,
    };

    Ok(AttackReport {
        plan: *plan,
        metrics: AttackMetrics {
            baseline_b_mis: baseline_strength.misclassified_pct,
            baseline_b_mis_clean: baseline_clean,
            baseline_into_a: baseline_strength.into_a_pct,
            baseline_causality_a_mis: baseline_causality,
            tampered_b_mis: tampered_strength.misclassified_pct,
            into_a: tampered_strength.into_a_pct,
            causality_a_mis: tampered_causality,
            non_obtrusiveness_delta: delta,
        },
        train_config_digest: train_config_digest(train_config, architecture),
        toolkit_version: crate::TOOLKIT_VERSION.to_string(),
    })
}

impl AttackReport {
    /// Canonical JSON with sorted keys; byte-stable for equal reports.
    pub fn to_json(&self) -> String {
        canonical_json(self).expect("report serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    /// Human-readable summary, one decimal per percentage.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        out.push_str(&format!(
            "poison plan: class A={} -> class B={}, pixel ({}, {}) channel {} value {}\n",
            self.plan.class_a,
            self.plan.class_b,
            self.plan.spec.row,
            self.plan.spec.col,
            self.plan.spec.channel,
            self.plan.spec.value
        ));
        out.push_str(&format!(
            "class-B misclassification:  baseline {:5.1}%  tampered {:5.1}%\n",
            m.baseline_b_mis, m.tampered_b_mis
        ));
        out.push_str(&format!(
            "class-B into class A:       baseline {:5.1}%  tampered {:5.1}%\n",
            m.baseline_into_a, m.into_a
        ));
        out.push_str(&format!(
            "class-A misclassification:  baseline {:5.1}%  tampered {:5.1}%\n",
            m.baseline_causality_a_mis, m.causality_a_mis
        ));
        if let Some(clean) = m.baseline_b_mis_clean {
            out.push_str(&format!(
                "class-B mis, clean test:    baseline {clean:5.1}%\n"
            ));
        }
        out.push_str(&format!(
            "non-obtrusiveness delta:    {:+.1} points\n",
            m.non_obtrusiveness_delta
        ));
        out
    }
}

/// Deterministic rendering of a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedConfusion {
    /// Row-normalized heatmap, 16x16 pixels per cell, PNG-encoded.
    pub png: Vec<u8>,
    /// Aligned text table with class-name row and column labels.
    pub table: String,
}

const CELL: usize = 16;
const HEAT_LOW: [f64; 3] = [248.0, 250.0, 255.0];
const HEAT_HIGH: [f64; 3] = [8.0, 48.0, 107.0];

pub fn render_confusion(cm: &ConfusionMatrix) -> Result<RenderedConfusion> {
    let k = cm.num_classes();
    let side = (k * CELL) as u32;
    let mut img = image::RgbImage::new(side, side);
    for r in 0..k {
        let row = cm.row_sum(r);
        for c in 0..k {
            let t = if row == 0 {
                0.0
            } else {
                cm.count(r, c) as f64 / row as f64
            };
            let rgb = [
                (HEAT_LOW[0] + t * (HEAT_HIGH[0] - HEAT_LOW[0])).round() as u8,
                (HEAT_LOW[1] + t * (HEAT_HIGH[1] - HEAT_LOW[1])).round() as u8,
                (HEAT_LOW[2] + t * (HEAT_HIGH[2] - HEAT_LOW[2])).round() as u8,
            ];
            for dy in 0..CELL {
                for dx in 0..CELL {
                    img.put_pixel(
                        (c * CELL + dx) as u32,
                        (r * CELL + dy) as u32,
                        image::Rgb(rgb),
                    );
                }
            }
        }
    }
    let mut png = Vec::new();
    image::codecs::png::PngEncoder::new(&mut png).write_image(
        img.as_raw(),
        side,
        side,
        image::ExtendedColorType::Rgb8,
    )?;

    Ok(RenderedConfusion {
        png,
        table: text_table(cm),
    })
}

fn text_table(cm: &ConfusionMatrix) -> String {
    let k = cm.num_classes();
    let name_width = cm
        .class_names
        .iter()
        .map(|n| n.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let col_widths: Vec<usize> = (0..k)
        .map(|c| {
            let widest_count = (0..k)
                .map(|r| cm.count(r, c).to_string().len())
                .max()
                .unwrap_or(1);
            widest_count.max(cm.class_names[c].len())
        })
        .collect();
    let mut out = String::new();
    out.push_str(&" ".repeat(name_width));
    for c in 0..k {
        out.push_str(&format!(" {:>width$}", cm.class_names[c], width = col_widths[c]));
    }
    out.push('\n');
    for r in 0..k {
        out.push_str(&format!("{:<name_width$}", cm.class_names[r]));
        for c in 0..k {
            out.push_str(&format!(" {:>width$}", cm.count(r, c), width = col_widths[c]));
        }
        out.push('\n');
    }
    out
}

use image::ImageEncoder;

//! Experiment configuration: one TOML document plus flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pixelwarden::dataset::{
    generate_overlapping, generate_synthetic, load_cifar10_binary, load_png_directory,
    split_train_val,
};
use pixelwarden::defense::DefenseFilter;
use pixelwarden::tamper::{PoisonPlan, TamperSpec};
use pixelwarden::trainer::TrainConfig;
use pixelwarden::{Architecture, LabeledDataset, Split};

/// Environment variable giving the default dataset root.
pub const DATA_ROOT_ENV: &str = "PIXELWARDEN_DATA_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub plan: PlanConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_model")]
    pub model: Architecture,
    #[serde(default)]
    pub defense: Vec<DefenseFilter>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Optional stratified subsample of train/val (test stays full size).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_fraction: Option<f64>,
    #[serde(default)]
    pub overwrite: bool,
}

fn default_model() -> Architecture {
    Architecture::Bcnn
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("pixelwarden-run")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[serde(deny_unknown_fields)]
pub enum DatasetConfig {
    /// CIFAR-10 binary batches under `path` (falls back to the environment
    /// data root when omitted).
    Cifar10 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// PNG trees: `path/train/<class>/*.png`, `path/test/...`, and either a
    /// `val` tree or a carve-out from train.
    Png {
        path: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// Seeded in-memory fixtures.
    Synthetic {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_side")]
        height: usize,
        #[serde(default = "default_side")]
        width: usize,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        /// `separable` = distinct mean colors; `overlapping` = confusable
        /// classes suited to attack experiments.
        #[serde(default = "default_style")]
        style: SyntheticStyle,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticStyle {
    Separable,
    Overlapping,
}

fn default_val_fraction() -> f64 {
    0.2
}
fn default_classes() -> usize {
    10
}
fn default_per_class() -> usize {
    150
}
fn default_test_per_class() -> usize {
    50
}
fn default_side() -> usize {
    32
}
fn default_style() -> SyntheticStyle {
    SyntheticStyle::Overlapping
}

/// Tamper plan as written in config files; the location may be explicit or
/// sampled from the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub class_a: usize,
    pub class_b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
    #[serde(default = "default_channel")]
    pub channel: usize,
    #[serde(default)]
    pub value: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_seed: Option<u64>,
}

fn default_channel() -> usize {
    pixelwarden::tamper::BLUE_CHANNEL
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid experiment config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Resolves the tamper plan against image dimensions, sampling the
    /// location when none was given.
    pub fn resolve_plan(&self, height: usize, width: usize) -> Result<PoisonPlan> {
        let p = &self.plan;
        let spec = match (p.row, p.col) {
            (Some(row), Some(col)) => {
                let mut spec = TamperSpec::at(row, col, p.channel, p.value)?;
                spec.location_seed = p.location_seed.unwrap_or(0);
                spec
            }
            (None, None) => {
                let seed = p.location_seed.unwrap_or(self.seed);
                let mut spec = TamperSpec::sampled(height, width, seed)?;
                spec.channel = p.channel;
                spec.value = p.value;
                spec
            }
            _ => bail!("plan must give both row and col, or neither"),
        };
        Ok(PoisonPlan::new(p.class_a, p.class_b, spec)?)
    }
}

/// The three protocol splits, all clean.
pub struct SplitSet {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Loads (or generates) the clean splits named by the config.
pub fn load_splits(config: &ExperimentConfig) -> Result<SplitSet> {
    match &config.dataset {
        DatasetConfig::Cifar10 { path, val_fraction } => {
            let root = match path {
                Some(p) => p.clone(),
                None => default_data_root()?.join("cifar-10-batches-bin"),
            };
            let pool = load_cifar10_binary(&root, Split::Train)?;
            let (train, val) = split_train_val(&pool, *val_fraction, config.seed)?;
            let test = load_cifar10_binary(&root, Split::Test)?;
            Ok(SplitSet { train, val, test })
        }
        DatasetConfig::Png { path, val_fraction } => {
            let train_root = path.join("train");
            let test_root = path.join("test");
            let val_root = path.join("val");
            let test = load_png_directory(&test_root)?.with_split(Split::Test);
            if val_root.is_dir() {
                let train = load_png_directory(&train_root)?;
                let val = load_png_directory(&val_root)?.with_split(Split::Val);
                Ok(SplitSet { train, val, test })
            } else {
                let pool = load_png_directory(&train_root)?;
                let (train, val) = split_train_val(&pool, *val_fraction, config.seed)?;
                Ok(SplitSet { train, val, test })
            }
        }
        DatasetConfig::Synthetic {
            num_classes,
            per_class,
            test_per_class,
            height,
            width,
            val_fraction,
            style,
        } => {
            // One pool so every split shares the class distributions, then a
            // stratified test carve followed by the train/val carve.
            let total = per_class + test_per_class;
            let pool = match style {
                SyntheticStyle::Separable => {
                    generate_synthetic(*num_classes, total, *height, *width, config.seed)?
                }
                SyntheticStyle::Overlapping => {
                    generate_overlapping(*num_classes, total, *height, *width, config.seed)?
                }
            };
            let test_fraction = *test_per_class as f64 / total as f64;
            let (rest, test) = split_train_val(&pool, test_fraction, config.seed ^ 0x7e57)?;
            let (train, val) = split_train_val(&rest, *val_fraction, config.seed)?;
            Ok(SplitSet {
                train,
                val,
                test: test.with_split(Split::Test),
            })
        }
    }
}

pub fn default_data_root() -> Result<PathBuf> {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(v) => Ok(PathBuf::from(v)),
        None => bail!(
            "no dataset path given and {DATA_ROOT_ENV} is not set; \
             point it at a directory containing your datasets"
        ),
    }
}

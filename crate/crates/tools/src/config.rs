//! Experiment configuration: a versioned TOML file describing one cell of
//! the experimental grid, repeated over several seeds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sim2real_core::fda::SwapConfig;
use sim2real_core::flow::FlowConfig;
use sim2real_core::seg::TrainConfig;
use sim2real_core::style::StyleTrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding `output_root`.
pub const ENV_OUTPUT_ROOT: &str = "SIM2REAL_OUT";
/// Environment variable bounding the number of concurrently running repeats.
pub const ENV_THREADS: &str = "SIM2REAL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendMode {
    None,
    Random,
    Irb,
}

fn default_repeats() -> usize {
    3
}
fn default_blend_total() -> usize {
    10
}
fn default_irb_max_iterations() -> usize {
    6
}
fn default_label() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Name used to group this configuration's records in the summary.
    #[serde(default = "default_label")]
    pub label: String,
    pub source_root: PathBuf,
    pub target_root: PathBuf,
    pub output_root: PathBuf,
    #[serde(default)]
    pub use_style_transfer: bool,
    #[serde(default)]
    pub use_fourier_swap: bool,
    pub blend: BlendMode,
    #[serde(default = "default_blend_total")]
    pub blend_total: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_irb_max_iterations")]
    pub irb_max_iterations: usize,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub swap: SwapSection,
    #[serde(default)]
    pub style: StyleSection,
}

/// Training knobs; seed and class count are filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub entropy_weight: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            entropy_weight: d.entropy_weight,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, num_classes: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            num_classes,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            entropy_weight: self.entropy_weight,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwapSection {
    pub window_fraction: f64,
}

impl Default for SwapSection {
    fn default() -> Self {
        SwapSection { window_fraction: SwapConfig::default().window_fraction }
    }
}

impl SwapSection {
    pub fn to_core(&self) -> SwapConfig {
        SwapConfig { window_fraction: self.window_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub style_weight: f64,
    pub num_blocks: usize,
    pub steps_per_block: usize,
    pub coupling_hidden: usize,
    pub extractor_seed: u64,
}

impl Default for StyleSection {
    fn default() -> Self {
        let d = StyleTrainConfig::default();
        let f = FlowConfig::default();
        StyleSection {
            iterations: d.iterations,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            style_weight: d.style_weight,
            num_blocks: f.num_blocks,
            steps_per_block: f.steps_per_block,
            coupling_hidden: f.coupling_hidden,
            extractor_seed: 0,
        }
    }
}

impl StyleSection {
    pub fn to_core(&self, seed: u64) -> StyleTrainConfig {
        StyleTrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            style_weight: self.style_weight,
            seed,
        }
    }

    pub fn flow_config(&self, seed: u64) -> FlowConfig {
        FlowConfig {
            in_channels: 3,
            num_blocks: self.num_blocks,
            steps_per_block: self.steps_per_block,
            coupling_hidden: self.coupling_hidden,
            seed,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {}", self.schema_version);
        }
        if self.repeats < 1 {
            bail!("repeats must be >= 1");
        }
        if self.seeds.len() != self.repeats {
            bail!("{} seeds listed for {} repeats", self.seeds.len(), self.repeats);
        }
        if self.blend != BlendMode::None && (self.blend_total == 0 || self.blend_total % 10 != 0) {
            bail!("blend_total must be a positive multiple of 10, got {}", self.blend_total);
        }
        Ok(())
    }

    /// Apply environment overrides (output root).
    pub fn apply_env(&mut self) {
        if let Ok(out) = std::env::var(ENV_OUTPUT_ROOT) {
            if !out.is_empty() {
                self.output_root = PathBuf::from(out);
            }
        }
    }
}

/// Concurrency bound for repeats; defaults to the repeat count.
pub fn thread_limit(repeats: usize) -> usize {
    std::env::var(ENV_THREADS)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(repeats)
        .min(repeats.max(1))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.apply_env();
    config.validate()?;
    Ok(config)
}

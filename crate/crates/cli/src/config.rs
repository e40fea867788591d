//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbnn_core::checkpoint::Dtype;
use tbnn_core::data::SyntheticKind;
use tbnn_core::metrics::DEFAULT_ECE_BINS;
use tbnn_core::models::ModelSpec;
use tbnn_core::posterior::Precision;
use tbnn_core::priors::{PriorFamily, PriorSpec};
use tbnn_core::samplers::SamplerConfig;

use crate::error::{CliError, CliResult};

/// Environment variable consulted for relative data paths that do not
/// resolve next to the config file.
pub const DATA_DIR_ENV: &str = "TBNN_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelSpec::mnist_fcnn")]
    pub model: ModelSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    /// Prior families swept by `sweep`; defaults to `prior.family` alone.
    #[serde(default)]
    pub prior_grid: Vec<PriorFamily>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Configuration of `train`.
    #[serde(default = "SamplerConfig::map_preset")]
    pub train: SamplerConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_temperatures")]
    pub temperature_grid: Vec<f64>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Master seed; chain and initialization seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub checkpoint_dtype: Dtype,
}

fn default_temperatures() -> Vec<f64> {
    vec![1.0]
}

fn default_chains() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Rows kept for training, after any split.
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default = "yes")]
    pub stratified: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Image/label IDX pairs. Without a test pair, train and test are drawn
    /// disjointly from the training files.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "last_column")]
        target_column: isize,
        #[serde(default)]
        has_header: bool,
        #[serde(default = "train_fraction")]
        split_fraction: f64,
    },
    Synthetic {
        dataset: SyntheticKind,
        n: usize,
        #[serde(default)]
        test_n: usize,
        #[serde(default = "synthetic_noise")]
        noise: f64,
    },
}

fn last_column() -> isize {
    -1
}

fn train_fraction() -> f64 {
    0.9
}

fn synthetic_noise() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Out-of-distribution IDX images scored against the test set.
    #[serde(default)]
    pub ood_images: Option<PathBuf>,
    #[serde(default)]
    pub rotation_angles: Vec<f64>,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_ECE_BINS
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ood_images: None, rotation_angles: Vec::new(), ece_bins: DEFAULT_ECE_BINS }
    }
}

/// Resolves `p` against the config directory, then `$TBNN_DATA_DIR`.
pub fn resolve_path(p: &Path, base: &Path) -> CliResult<PathBuf> {
    if p.is_absolute() {
        return if p.exists() { Ok(p.to_path_buf()) } else { Err(CliError::config(format!("{} does not exist", p.display()))) };
    }
    let local = base.join(p);
    if local.exists() {
        return Ok(local);
    }
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        let alt = PathBuf::from(dir).join(p);
        if alt.exists() {
            return Ok(alt);
        }
    }
    Err(CliError::config(format!("cannot resolve {} (looked in {} and ${DATA_DIR_ENV})", p.display(), base.display())))
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    /// Reads a config file and resolves every data path relative to it.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) -> CliResult<()> {
        match &mut self.data.source {
            DataSource::Idx { images, labels, test_images, test_labels } => {
                *images = resolve_path(images, base)?;
                *labels = resolve_path(labels, base)?;
                if let Some(t) = test_images {
                    *t = resolve_path(t, base)?;
                }
                if let Some(t) = test_labels {
                    *t = resolve_path(t, base)?;
                }
            }
            DataSource::Csv { path, .. } => *path = resolve_path(path, base)?,
            DataSource::Synthetic { .. } => {}
        }
        if let Some(p) = &mut self.eval.ood_images {
            *p = resolve_path(p, base)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::config(m));
        if self.temperature_grid.is_empty() {
            return bad("temperature_grid must not be empty".into());
        }
        if let Some(t) = self.temperature_grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return bad(format!("temperature_grid entries must be positive, got {t}"));
        }
        if self.chains == 0 {
            return bad("chains must be positive".into());
        }
        if self.eval.ece_bins == 0 {
            return bad("eval.ece_bins must be positive".into());
        }
        if let DataSource::Idx { test_images, test_labels, .. } = &self.data.source {
            if test_images.is_some() != test_labels.is_some() {
                return bad("test_images and test_labels must be given together".into());
            }
        }
        if let DataSource::Csv { split_fraction, .. } = &self.data.source {
            if !(*split_fraction > 0.0 && *split_fraction < 1.0) {
                return bad(format!("split_fraction must be in (0, 1), got {split_fraction}"));
            }
        }
        self.prior.validate().map_err(CliError::config_from)?;
        self.sampler.validate().map_err(CliError::config_from)?;
        self.train.validate().map_err(CliError::config_from)?;
        self.model.layout().map_err(CliError::config_from)?;
        Ok(())
    }

    /// Prior families of the sweep, in configuration order.
    pub fn priors(&self) -> Vec<PriorSpec> {
        if self.prior_grid.is_empty() {
            return vec![self.prior.clone()];
        }
        self.prior_grid.iter().map(|&family| PriorSpec { family, ..self.prior.clone() }).collect()
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EdgesSpec, NlgpSpec};
use crate::error::{Error, Result};
use crate::localization::{ChannelMode, DEFAULT_TOP_UNITS};
use crate::nn::{ModelConfig, TrainConfig};
use crate::pruning::PruneSchedule;
use crate::seed::{self, labels};

/// Everything an experiment needs, read from and written back to TOML.
///
/// ```toml
/// seed = 1
/// output_dir = "runs/edges-1"
///
/// [model]
/// hidden = [64, 64]
/// batch_norm = true
///
/// [train]
/// total_iterations = 3000
/// rewind_iteration = 30
/// batch_size = 64
/// learning_rate = 0.2
///
/// [schedule]
/// fraction = 0.3
/// rounds = 8
/// scope = "first_layer_only"
///
/// [data]
/// kind = "edges"
/// gaussian_clone = false
/// n_train = 8000
/// n_test = 1000
/// n_p = 16
/// n_classes = 4
/// contrast = 1.0
/// noise_std = 0.0
///
/// [analysis]
/// kurtosis_layers = [1, 2]
/// cavity_rounds = [0]
/// localization_k = 8
/// channel_mode = "union"
/// ica_components = 64
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stochastic component derives its own seed from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub train: TrainSection,
    pub schedule: PruneSchedule,
    pub data: DataConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    #[serde(default = "yes")]
    pub batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub total_iterations: u64,
    pub rewind_iteration: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub source: DataSource,
    /// Replace both splits by samples from a Gaussian clone of the training split.
    #[serde(default)]
    pub gaussian_clone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Edges {
        n_train: usize,
        n_test: usize,
        n_p: u32,
        n_classes: u32,
        contrast: f64,
        noise_std: f64,
    },
    Nlgp {
        n_train: usize,
        n_test: usize,
        n_p: u32,
        correlation_length: f64,
        gain: f64,
    },
    File {
        train_path: PathBuf,
        test_path: PathBuf,
    },
}

impl DataSource {
    pub fn edges_spec(&self, n_samples: usize) -> Option<EdgesSpec> {
        match *self {
            DataSource::Edges {
                n_p,
                n_classes,
                contrast,
                noise_std,
                ..
            } => Some(EdgesSpec {
                n_samples,
                n_p,
                n_classes,
                contrast,
                noise_std,
            }),
            _ => None,
        }
    }

    pub fn nlgp_spec(&self, n_samples: usize) -> Option<NlgpSpec> {
        match *self {
            DataSource::Nlgp {
                n_p,
                correlation_length,
                gain,
                ..
            } => Some(NlgpSpec {
                n_samples,
                n_p,
                correlation_length,
                gain,
            }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DataSource::Edges { .. } => "edges",
            DataSource::Nlgp { .. } => "nlgp",
            DataSource::File { .. } => "file",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Hidden layers (1-based) whose preactivation kurtosis is reported.
    #[serde(default = "default_kurtosis_layers")]
    pub kurtosis_layers: Vec<usize>,
    /// IMP rounds whose masks the cavity scores are evaluated under.
    #[serde(default = "default_cavity_rounds")]
    pub cavity_rounds: Vec<u32>,
    /// Units per round entering the RF-width statistics; clamped to the
    /// first hidden width.
    #[serde(default = "default_localization_k")]
    pub localization_k: usize,
    #[serde(default)]
    pub channel_mode: ChannelMode,
    /// Clamped to the input dimension.
    #[serde(default = "default_ica_components")]
    pub ica_components: usize,
    #[serde(default = "default_histogram_bins")]
    pub histogram_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            kurtosis_layers: default_kurtosis_layers(),
            cavity_rounds: default_cavity_rounds(),
            localization_k: default_localization_k(),
            channel_mode: ChannelMode::default(),
            ica_components: default_ica_components(),
            histogram_bins: default_histogram_bins(),
        }
    }
}

fn yes() -> bool {
    true
}
fn default_kurtosis_layers() -> Vec<usize> {
    vec![1, 2]
}
fn default_cavity_rounds() -> Vec<u32> {
    vec![0]
}
fn default_localization_k() -> usize {
    DEFAULT_TOP_UNITS
}
fn default_ica_components() -> usize {
    crate::decomp::DEFAULT_COMPONENTS
}
fn default_histogram_bins() -> usize {
    20
}

/// The fields that determine trained artifacts. Analysis settings and the
/// output location are deliberately absent.
#[derive(Serialize)]
struct PipelineKey<'a> {
    seed: u64,
    model: &'a ModelSection,
    train: &'a TrainSection,
    schedule: &'a PruneSchedule,
    data: &'a DataConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::InvalidConfig("model.hidden needs at least one non-zero width".into()));
        }
        self.train_config().validate()?;
        self.schedule.validate()?;
        match &self.data.source {
            DataSource::Edges {
                n_train,
                n_test,
                n_p,
                n_classes,
                noise_std,
                contrast,
            } => {
                if *n_train == 0 || *n_test == 0 || *n_p == 0 || *n_classes < 2 {
                    return Err(Error::InvalidConfig("edges data needs samples, N_p and at least 2 classes".into()));
                }
                if !(noise_std.is_finite() && *noise_std >= 0.0 && contrast.is_finite()) {
                    return Err(Error::InvalidConfig("edges contrast and noise_std must be finite, noise_std >= 0".into()));
                }
            }
            DataSource::Nlgp {
                n_train,
                n_test,
                n_p,
                correlation_length,
                gain,
            } => {
                if *n_train == 0 || *n_test == 0 || *n_p == 0 || !(*correlation_length > 0.0) || !(*gain > 0.0) {
                    return Err(Error::InvalidConfig("nlgp data needs samples, N_p, correlation_length > 0, gain > 0".into()));
                }
            }
            DataSource::File { .. } => {}
        }
        if self.analysis.kurtosis_layers.iter().any(|&l| l == 0 || l > self.model.hidden.len()) {
            return Err(Error::InvalidConfig(format!(
                "analysis.kurtosis_layers must lie in 1..={}",
                self.model.hidden.len()
            )));
        }
        if let Some(r) = self.analysis.cavity_rounds.iter().find(|&&r| r >= self.schedule.rounds) {
            return Err(Error::InvalidConfig(format!(
                "cavity round {r} needs a later removal round; must be < {}",
                self.schedule.rounds
            )));
        }
        if self.analysis.localization_k == 0 || self.analysis.ica_components == 0 || self.analysis.histogram_bins == 0 {
            return Err(Error::InvalidConfig("analysis counts must be positive".into()));
        }
        Ok(())
    }

    /// Hex hash of everything that shapes the trained artifacts.
    pub fn pipeline_hash(&self) -> String {
        seed::short_hash(&self.pipeline_key())
    }

    /// The same hash as an integer, for binary headers.
    pub fn pipeline_hash_u64(&self) -> u64 {
        seed::hash_u64(&self.pipeline_key())
    }

    fn pipeline_key(&self) -> Vec<u8> {
        serde_json::to_vec(&PipelineKey {
            seed: self.seed,
            model: &self.model,
            train: &self.train,
            schedule: &self.schedule,
            data: &self.data,
        })
        .expect("config serializes")
    }

    pub fn derived_seed(&self, label: &str) -> u64 {
        seed::derive_seed(self.seed, label)
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        let mut sizes = vec![data.feature_dim()];
        sizes.extend(&self.model.hidden);
        sizes.push(data.n_classes() as usize);
        ModelConfig::new(sizes, self.model.batch_norm, self.derived_seed(labels::INIT))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            total_iterations: self.train.total_iterations,
            rewind_iteration: self.train.rewind_iteration,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.derived_seed(labels::BATCH_ORDER),
        }
    }

    /// Top-unit count actually used for a layer of `width` units.
    pub fn localization_k(&self, width: usize) -> usize {
        self.analysis.localization_k.min(width)
    }
}

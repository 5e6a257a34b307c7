use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};

/// Pipeline stages, named after the command that runs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Gen,
    Train,
    Imp,
    Oneshot,
    Randprune,
    Kurtosis,
    Localization,
    Cavity,
    IcaMatch,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Imp => "imp",
            Stage::Oneshot => "oneshot",
            Stage::Randprune => "randprune",
            Stage::Kurtosis => "kurtosis",
            Stage::Localization => "localization",
            Stage::Cavity => "cavity",
            Stage::IcaMatch => "ica-match",
            Stage::Report => "report",
        }
    }

    /// The command line that produces this stage's artifacts.
    pub fn command(self) -> String {
        match self {
            Stage::Kurtosis | Stage::Localization | Stage::Cavity | Stage::IcaMatch => {
                format!("prunelab analyze {} --config <config>", self.name())
            }
            _ => format!("prunelab {} --config <config>", self.name()),
        }
    }
}

/// Written when a stage completes; downstream stages check it before
/// trusting the stage's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
}

/// Layout of one experiment's output directory:
///
/// ```text
/// config.toml          exact config of the latest command
/// data/                train.plds, test.plds (+ .json provenance)
/// checkpoints/         rewind.plck, dense.plck, imp_round_NN.plck
/// masks/               imp_round_NN.plmk, oneshot.plmk, random.plmk (+ .json)
/// reports/             CSV and JSON tables
/// logs/                loss traces and per-round wall-clock
/// stamps/              one JSON stamp per completed stage
/// .lock                present while a command owns the directory
/// ```
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<()> {
        for sub in ["data", "checkpoints", "masks", "reports", "logs", "stamps"] {
            fs::create_dir_all(self.root.join(sub))?;
        }
        Ok(())
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }
    pub fn mask(&self, name: &str) -> PathBuf {
        self.root.join("masks").join(name)
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }
    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.root.join("stamps").join(format!("{}.json", stage.name()))
    }

    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        fs::write(self.config_path(), cfg.to_toml_string())?;
        Ok(())
    }

    pub fn stamp(&self, stage: Stage, cfg: &ExperimentConfig) -> Result<()> {
        let stamp = Stamp {
            stage,
            config_hash: cfg.pipeline_hash(),
            seed: cfg.seed,
        };
        fs::write(self.stamp_path(stage), serde_json::to_string_pretty(&stamp)?)?;
        Ok(())
    }

    pub fn has_stamp(&self, stage: Stage) -> bool {
        self.stamp_path(stage).exists()
    }

    /// Fails unless `stage` completed under the same pipeline hash.
    pub fn require(&self, stage: Stage, cfg: &ExperimentConfig) -> Result<()> {
        let path = self.stamp_path(stage);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                producer: stage.command(),
            });
        }
        let stamp: Stamp = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let expected = cfg.pipeline_hash();
        if stamp.config_hash != expected {
            return Err(Error::StaleArtifact {
                path,
                expected,
                found: stamp.config_hash,
            });
        }
        Ok(())
    }

    /// Like [`RunDir::require`], but a missing stage is not an error.
    pub fn optional(&self, stage: Stage, cfg: &ExperimentConfig) -> Result<bool> {
        if !self.has_stamp(stage) {
            return Ok(false);
        }
        self.require(stage, cfg)?;
        Ok(true)
    }

    /// Take exclusive ownership of the directory until the guard drops.
    pub fn lock(&self) -> Result<RunLock> {
        fs::create_dir_all(&self.root)?;
        let path = self.root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path, _file: f })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(self.root.clone())),
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
    _file: File,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

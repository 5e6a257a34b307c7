//! `PLDS` dataset container.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic "PLDS" | version u32 | n_samples u64 | n_classes u32 | channels u32
//! N_p u32 | split u8 (0 train, 1 test) | dtype u8 (1 f32, 2 f64)
//! has_normalization u8
//! images [n_samples * channels * N_p^2] dtype, row-major
//! labels [n_samples] u32
//! if has_normalization: mean [F] f64 | std [F] f64
//! ```
//!
//! `f64` storage round-trips bit-exactly; `f32` is the compact option.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Normalization, Split};
use crate::binio::{mul_dims, Reader, Writer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"PLDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl Dataset {
    pub fn encode(&self, dtype: DType) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.len() as u64);
        w.u32(self.n_classes());
        w.u32(self.channels());
        w.u32(self.n_p());
        w.u8(match self.split() {
            Split::Train => 0,
            Split::Test => 1,
        });
        match dtype {
            DType::F32 => {
                w.u8(1);
                w.u8(self.normalization().is_some() as u8);
                w.f32s(self.images().as_slice().iter().map(|&v| v as f32));
            }
            DType::F64 => {
                w.u8(2);
                w.u8(self.normalization().is_some() as u8);
                w.f64s(self.images().as_slice());
            }
        }
        for &y in self.labels() {
            w.u32(y);
        }
        if let Some(n) = self.normalization() {
            w.f64s(&n.mean);
            w.f64s(&n.std);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let n = r.u64()?;
        let n_classes = r.u32()?;
        let channels = r.u32()?;
        let n_p = r.u32()?;
        let split = match r.u8()? {
            0 => Split::Train,
            1 => Split::Test,
            other => return Err(Error::Format(format!("unknown split tag {other}"))),
        };
        let dtype = r.u8()?;
        let has_norm = r.bool()?;
        let feat = mul_dims(&[channels as u64, n_p as u64, n_p as u64])?;
        let count = mul_dims(&[n, feat])?;
        let data = match dtype {
            1 => r.f32s(count)?.into_iter().map(f64::from).collect(),
            2 => r.f64s(count)?,
            other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
        };
        let labels = r.u32s(n)?;
        let norm = if has_norm {
            Some(Normalization {
                mean: r.f64s(feat)?,
                std: r.f64s(feat)?,
            })
        } else {
            None
        };
        r.finish()?;
        let images = Matrix::from_vec(n as usize, feat as usize, data)?;
        let mut ds = Dataset::new(images, labels, n_classes, channels, n_p, split)
            .map_err(|e| Error::Format(e.to_string()))?;
        ds.set_normalization(norm)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path, dtype: DType) -> Result<()> {
        std::fs::write(path, self.encode(dtype))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Provenance written next to each dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub generator: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
    pub n_samples: usize,
    pub class_counts: Vec<usize>,
    pub split: Split,
}

impl DatasetSidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

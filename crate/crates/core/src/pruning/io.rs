//! `PLMK` mask container plus its JSON sidecar.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic "PLMK" | version u32 | round u32 | n_layers u32
//! per layer: rows u32 | cols u32 | ceil(rows*cols/8) bytes
//! ```
//!
//! Bits are row-major, least-significant bit first within each byte; unused
//! trailing bits of a layer must be zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerMask, Mask, PruneSchedule};
use crate::binio::{mul_dims, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PLMK";
const VERSION: u32 = 1;

impl Mask {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.round());
        w.u32(self.n_layers() as u32);
        for layer in self.layers() {
            w.u32(layer.rows() as u32);
            w.u32(layer.cols() as u32);
            let mut packed = vec![0u8; layer.bits().len().div_ceil(8)];
            for (i, &b) in layer.bits().iter().enumerate() {
                if b {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            w.bytes(&packed);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let round = r.u32()?;
        let n_layers = r.u32()?;
        r.checked_len(n_layers as u64, 8)?;
        let mut layers = Vec::with_capacity(n_layers as usize);
        for l in 0..n_layers {
            let rows = r.u32()? as u64;
            let cols = r.u32()? as u64;
            let total = mul_dims(&[rows, cols])?;
            let n_bytes = r.checked_len(total.div_ceil(8), 1)?;
            let packed = r.take(n_bytes)?;
            let total = total as usize;
            if total % 8 != 0 {
                let last = packed[n_bytes - 1];
                if last >> (total % 8) != 0 {
                    return Err(Error::Format(format!("layer {l}: nonzero padding bits")));
                }
            }
            let bits = (0..total).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
            layers.push(LayerMask::from_bits(rows as usize, cols as usize, bits)?);
        }
        r.finish()?;
        Ok(Mask::from_layers(round, layers))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Human-readable metadata written next to every mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    /// `imp`, `oneshot` or `random`.
    pub family: String,
    pub round: u32,
    pub sparsity: Vec<f64>,
    pub kept: Vec<usize>,
    pub schedule: Option<PruneSchedule>,
    pub config_hash: String,
}

impl MaskSidecar {
    pub fn describe(mask: &Mask, family: &str, schedule: Option<PruneSchedule>, config_hash: &str) -> Self {
        Self {
            family: family.to_string(),
            round: mask.round(),
            sparsity: (0..mask.n_layers()).map(|l| mask.sparsity(l)).collect(),
            kept: (0..mask.n_layers()).map(|l| mask.kept(l)).collect(),
            schedule,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

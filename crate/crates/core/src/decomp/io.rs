//! `PLCP` components container plus JSON metadata.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic "PLCP" | version u32 | method u8 (1 PCA, 2 ICA) | converged u8
//! rank_deficient u8 | iterations u32 | n_components u32 | feature_dim u32
//! components f64[n*d] | mean f64[d] | explained_variance f64[n_var] (u32 count first)
//! has_ica u8 | if 1: unmixing f64[n*d] | rotation f64[n*n]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Components, Method};
use crate::binio::{mul_dims, Reader, Writer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"PLCP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentsMetadata {
    pub method: Method,
    pub n_components: usize,
    pub feature_dim: usize,
    pub seed: Option<u64>,
    pub iterations: usize,
    pub converged: bool,
    pub rank_deficient: bool,
    pub source: String,
}

impl ComponentsMetadata {
    pub fn describe(c: &Components, seed: Option<u64>, source: &str) -> Self {
        Self {
            method: c.method,
            n_components: c.n_components(),
            feature_dim: c.feature_dim(),
            seed,
            iterations: c.iterations,
            converged: c.converged,
            rank_deficient: c.rank_deficient,
            source: source.to_string(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

impl Components {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u8(match self.method {
            Method::Pca => 1,
            Method::Ica => 2,
        });
        w.u8(self.converged.into());
        w.u8(self.rank_deficient.into());
        w.u32(self.iterations as u32);
        w.u32(self.n_components() as u32);
        w.u32(self.feature_dim() as u32);
        w.f64s(self.components.as_slice());
        w.f64s(&self.mean);
        w.u32(self.explained_variance.len() as u32);
        w.f64s(&self.explained_variance);
        match (&self.unmixing, &self.rotation) {
            (Some(u), Some(r)) => {
                w.u8(1);
                w.f64s(u.as_slice());
                w.f64s(r.as_slice());
            }
            _ => w.u8(0),
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let method = match r.u8()? {
            1 => Method::Pca,
            2 => Method::Ica,
            m => return Err(Error::Format(format!("unknown decomposition method {m}"))),
        };
        let converged = r.bool()?;
        let rank_deficient = r.bool()?;
        let iterations = r.u32()? as usize;
        let n = r.u32()? as u64;
        let d = r.u32()? as u64;
        let components = Matrix::from_vec(n as usize, d as usize, r.f64s(mul_dims(&[n, d])?)?)?;
        let mean = r.f64s(d)?;
        let n_var = r.u32()? as u64;
        let explained_variance = r.f64s(n_var)?;
        let (unmixing, rotation) = if r.bool()? {
            let u = Matrix::from_vec(n as usize, d as usize, r.f64s(mul_dims(&[n, d])?)?)?;
            let rot = Matrix::from_vec(n as usize, n as usize, r.f64s(mul_dims(&[n, n])?)?)?;
            (Some(u), Some(rot))
        } else {
            (None, None)
        };
        r.finish()?;
        if method == Method::Ica && unmixing.is_none() {
            return Err(Error::Format("ICA components without unmixing matrix".into()));
        }
        Ok(Components {
            method,
            components,
            mean,
            explained_variance,
            unmixing,
            rotation,
            iterations,
            converged,
            rank_deficient,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

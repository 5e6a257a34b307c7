//! `PLCK` checkpoint container.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic "PLCK" | version u32 | config_hash u64 | iteration u64
//! total_iterations u64 | batch_seed u64 | activation u8 | n_layers u32
//! per layer: fan_out u32 | fan_in u32 | has_bn u8
//!            weight [fan_out*fan_in] f64 (row-major) | bias [fan_out] f64
//!            if has_bn: gamma, beta, running_mean, running_var, each [fan_in] f64
//! ```
//!
//! The batch seed together with the iteration index fully determines the
//! remaining batch order (see `BatchSchedule`), so it is the RNG state.

use std::path::Path;

use super::{Activation, BatchNorm, Layer, Parameters, TrainConfig};
use crate::binio::{mul_dims, Reader, Writer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"PLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub iteration: u64,
    pub total_iterations: u64,
    pub batch_seed: u64,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn capture(params: &Parameters, iteration: u64, train: &TrainConfig, config_hash: u64) -> Self {
        Self {
            params: params.clone(),
            iteration,
            total_iterations: train.total_iterations,
            batch_seed: train.seed,
            config_hash,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.config_hash);
        w.u64(self.iteration);
        w.u64(self.total_iterations);
        w.u64(self.batch_seed);
        w.u8(match self.params.activation {
            Activation::Relu => 0,
        });
        w.u32(self.params.layers.len() as u32);
        for layer in &self.params.layers {
            w.u32(layer.fan_out() as u32);
            w.u32(layer.fan_in() as u32);
            w.u8(layer.bn.is_some() as u8);
            w.f64s(layer.weight.as_slice());
            w.f64s(&layer.bias);
            if let Some(bn) = &layer.bn {
                w.f64s(&bn.gamma);
                w.f64s(&bn.beta);
                w.f64s(&bn.running_mean);
                w.f64s(&bn.running_var);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let config_hash = r.u64()?;
        let iteration = r.u64()?;
        let total_iterations = r.u64()?;
        let batch_seed = r.u64()?;
        if iteration > total_iterations {
            return Err(Error::Format(format!(
                "iteration {iteration} exceeds total {total_iterations}"
            )));
        }
        let activation = match r.u8()? {
            0 => Activation::Relu,
            other => return Err(Error::Format(format!("unknown activation tag {other}"))),
        };
        let n_layers = r.u32()?;
        if n_layers == 0 {
            return Err(Error::Format("checkpoint has no layers".into()));
        }
        // Each layer header alone takes 9 bytes.
        r.checked_len(n_layers as u64, 9)?;
        let mut layers = Vec::with_capacity(n_layers as usize);
        for _ in 0..n_layers {
            let fan_out = r.u32()? as u64;
            let fan_in = r.u32()? as u64;
            let has_bn = r.bool()?;
            let count = mul_dims(&[fan_out, fan_in])?;
            let weight = r.f64s(count)?;
            let bias = r.f64s(fan_out)?;
            let bn = if has_bn {
                Some(BatchNorm {
                    gamma: r.f64s(fan_in)?,
                    beta: r.f64s(fan_in)?,
                    running_mean: r.f64s(fan_in)?,
                    running_var: r.f64s(fan_in)?,
                })
            } else {
                None
            };
            layers.push(Layer {
                weight: Matrix::from_vec(fan_out as usize, fan_in as usize, weight)?,
                bias,
                bn,
            });
        }
        r.finish()?;
        let params = Parameters { layers, activation };
        params
            .validate()
            .map_err(|e| Error::Format(format!("inconsistent checkpoint: {e}")))?;
        Ok(Self {
            params,
            iteration,
            total_iterations,
            batch_seed,
            config_hash,
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

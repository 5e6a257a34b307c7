use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl LayerMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(bits.len()) {
            return Err(Error::Shape(format!(
                "{} mask bits for a {rows}x{cols} layer",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub(crate) fn set_bits(&mut self, bits: Vec<bool>) -> Result<()> {
        if bits.len() != self.bits.len() {
            return Err(Error::Shape("mask length changed".into()));
        }
        self.bits = bits;
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn row_kept(&self, r: usize) -> usize {
        self.row(r).iter().filter(|&&b| b).count()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.kept() as f64 / self.bits.len() as f64
    }
}

/// Binary keep/prune indicator per weight, congruent with the network's
/// weight matrices, tagged with the pruning round that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    round: u32,
    layers: Vec<LayerMask>,
}

impl Mask {
    pub fn ones(shapes: &[(usize, usize)]) -> Self {
        Self {
            round: 0,
            layers: shapes.iter().map(|&(r, c)| LayerMask::ones(r, c)).collect(),
        }
    }

    pub fn from_layers(round: u32, layers: Vec<LayerMask>) -> Self {
        Self { round, layers }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn set_round(&mut self, round: u32) {
        self.round = round;
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerMask {
        &self.layers[l]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut LayerMask {
        &mut self.layers[l]
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.rows, l.cols)).collect()
    }

    pub fn kept(&self, layer: usize) -> usize {
        self.layers[layer].kept()
    }

    pub fn sparsity(&self, layer: usize) -> f64 {
        self.layers[layer].sparsity()
    }

    pub fn check_shapes(&self, shapes: &[(usize, usize)]) -> Result<()> {
        if self.shapes() != shapes {
            return Err(Error::Shape(format!(
                "mask shapes {:?} do not match weights {:?}",
                self.shapes(),
                shapes
            )));
        }
        Ok(())
    }

    /// `self ≤ other` elementwise.
    pub fn is_nested_in(&self, other: &Mask) -> bool {
        self.shapes() == other.shapes()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.bits.iter().zip(&b.bits).all(|(&x, &y)| !x || y))
    }
}

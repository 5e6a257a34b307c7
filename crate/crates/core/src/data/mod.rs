//! Labeled image datasets, their binary container, Gaussian clones and the
//! synthetic generators used for desk-scale experiments.
//!
//! Images are flattened channel-major: feature `c * N_p² + y * N_p + x`.

mod clone;
mod container;
mod generators;

pub use clone::{fit_gaussian_clone, sample_clone, CloneCell, CloneModel};
pub use container::{DType, DatasetSidecar};
pub use generators::{gen_edges, gen_edges_annotated, gen_nlgp, EdgesSpec, NlgpSpec, ORIENTATION_BINS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-feature statistics of the train split used for standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Matrix,
    labels: Vec<u32>,
    n_classes: u32,
    channels: u32,
    n_p: u32,
    split: Split,
    normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<u32>, n_classes: u32, channels: u32, n_p: u32, split: Split) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            n_classes,
            channels,
            n_p,
            split,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.n_p == 0 || self.n_classes == 0 {
            return Err(Error::Shape("channels, N_p and class count must be positive".into()));
        }
        let feat = self.channels as usize * (self.n_p as usize).pow(2);
        if self.images.cols() != feat {
            return Err(Error::Shape(format!(
                "images have {} features, expected channels x N_p^2 = {feat}",
                self.images.cols()
            )));
        }
        if self.images.rows() != self.labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                self.images.rows(),
                self.labels.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        if !self.images.is_finite() {
            return Err(Error::Shape("non-finite pixel value".into()));
        }
        if let Some(norm) = &self.normalization {
            if norm.mean.len() != feat || norm.std.len() != feat {
                return Err(Error::Shape("normalization metadata length mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.images.cols()
    }

    pub fn pixels_per_channel(&self) -> usize {
        (self.n_p as usize).pow(2)
    }

    pub fn n_classes(&self) -> u32 {
        self.n_classes
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn n_p(&self) -> u32 {
        self.n_p
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn class_indices(&self, class: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes as usize];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            images: Matrix::zeros(0, self.images.cols()),
            labels: Vec::new(),
            n_classes: self.n_classes,
            channels: self.channels,
            n_p: self.n_p,
            split: self.split,
            normalization: self.normalization.clone(),
        }
    }

    /// Per-feature mean and population standard deviation. Constant features
    /// get std 1 so that standardizing leaves them at zero.
    pub fn feature_stats(&self) -> Normalization {
        let (n, f) = (self.images.rows(), self.images.cols());
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, &x) in mean.iter_mut().zip(self.images.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((v, &x), &m) in var.iter_mut().zip(self.images.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n.max(1) as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, std }
    }

    /// Standardize with this dataset's own statistics. A dataset that already
    /// carries normalization metadata is returned unchanged.
    pub fn standardize(&self) -> Dataset {
        if self.normalization.is_some() {
            return self.clone();
        }
        let stats = self.feature_stats();
        self.standardize_with(&stats)
    }

    /// Standardize with externally supplied (train-split) statistics.
    pub fn standardize_with(&self, stats: &Normalization) -> Dataset {
        if self.normalization.is_some() {
            return self.clone();
        }
        let mut out = self.clone();
        let f = out.images.cols();
        for r in 0..out.images.rows() {
            let row = out.images.row_mut(r);
            for j in 0..f {
                row[j] = (row[j] - stats.mean[j]) / stats.std[j];
            }
        }
        out.normalization = Some(stats.clone());
        out
    }

    pub(crate) fn set_normalization(&mut self, norm: Option<Normalization>) -> Result<()> {
        self.normalization = norm;
        self.validate()
    }

    /// All pixels of one channel for the given samples, samples x N_p².
    pub fn channel_block(&self, indices: &[usize], channel: u32) -> Matrix {
        let p = self.pixels_per_channel();
        let off = channel as usize * p;
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(&self.images.row(i)[off..off + p]);
        }
        Matrix::from_vec(indices.len(), p, data).expect("block dims")
    }
}

/// Standardize a train/test pair with train statistics.
pub fn standardize_pair(train: &Dataset, test: &Dataset) -> (Dataset, Dataset) {
    let stats = match train.normalization() {
        Some(n) => n.clone(),
        None => train.feature_stats(),
    };
    (train.standardize_with(&stats), test.standardize_with(&stats))
}

#[cfg(test)]
mod tests;

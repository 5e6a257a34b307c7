//! Gaussian clone: per (class, channel) mean and covariance of a source
//! dataset, sampled back as μ + L g with g standard normal. The clone shares
//! the source's first two cumulants and has no higher-order ones.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Relative ridge added to each covariance: ε = RIDGE · trace(Σ) / N_p².
pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneCell {
    pub class: u32,
    pub channel: u32,
    pub mean: Vec<f64>,
    /// Empirical covariance (unbiased), row-major P x P.
    pub covariance: Vec<f64>,
    /// Lower-triangular factor of Σ + εI, row-major P x P.
    pub factor: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneModel {
    pub n_p: u32,
    pub channels: u32,
    pub n_classes: u32,
    pub class_counts: Vec<usize>,
    /// Class-major, then channel.
    pub cells: Vec<CloneCell>,
}

impl CloneModel {
    pub fn cell(&self, class: u32, channel: u32) -> &CloneCell {
        &self.cells[(class * self.channels + channel) as usize]
    }

    pub fn pixels(&self) -> usize {
        (self.n_p as usize).pow(2)
    }
}

/// Empirical mean and unbiased covariance of the rows of `x`.
pub(crate) fn mean_and_covariance(x: &Matrix) -> (Vec<f64>, DMatrix<f64>) {
    let (n, p) = (x.rows(), x.cols());
    let mut mean = vec![0.0; p];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |r, c| x.get(r, c) - mean[c]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    (mean, cov)
}

/// Cholesky factor of `cov + εI` with ε from the trace rule. Zero covariance
/// yields a zero factor. If rounding leaves the matrix indefinite, ε is grown
/// tenfold until the factorization succeeds.
pub(crate) fn regularized_factor(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let p = cov.nrows();
    let trace = cov.trace();
    let mut eps = RIDGE * trace / p as f64;
    if trace == 0.0 {
        return Ok((DMatrix::zeros(p, p), 0.0));
    }
    for _ in 0..8 {
        let mut reg = cov.clone();
        for i in 0..p {
            reg[(i, i)] += eps;
        }
        if let Some(ch) = reg.cholesky() {
            return Ok((ch.l(), eps));
        }
        eps *= 10.0;
    }
    Err(Error::Numerical("covariance factorization failed after regularization".into()))
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    // nalgebra is column-major; the transpose's storage is our row-major order.
    m.transpose().as_slice().to_vec()
}

pub fn fit_gaussian_clone(data: &Dataset) -> Result<CloneModel> {
    let counts = data.class_counts();
    let mut cells = Vec::with_capacity(counts.len() * data.channels() as usize);
    for class in 0..data.n_classes() {
        let idx = data.class_indices(class);
        if idx.len() < 2 {
            return Err(Error::InsufficientSamples {
                class,
                count: idx.len(),
            });
        }
        for channel in 0..data.channels() {
            let block = data.channel_block(&idx, channel);
            let (mean, cov) = mean_and_covariance(&block);
            let (factor, epsilon) = regularized_factor(&cov)?;
            cells.push(CloneCell {
                class,
                channel,
                mean,
                covariance: to_row_major(&cov),
                factor: to_row_major(&factor),
                epsilon,
            });
        }
    }
    Ok(CloneModel {
        n_p: data.n_p(),
        channels: data.channels(),
        n_classes: data.n_classes(),
        class_counts: counts,
        cells,
    })
}

/// Draw exactly `counts[c]` samples of each class c, class-major order.
pub fn sample_clone(model: &CloneModel, counts: &[usize], seed: u64, split: Split) -> Result<Dataset> {
    if counts.len() != model.n_classes as usize {
        return Err(Error::Shape(format!(
            "{} class counts for {} classes",
            counts.len(),
            model.n_classes
        )));
    }
    let p = model.pixels();
    let feat = p * model.channels as usize;
    let total: usize = counts.iter().sum();
    let mut rng = seed::rng(seed);
    let mut images = Vec::with_capacity(total * feat);
    let mut labels = Vec::with_capacity(total);
    let mut g = vec![0.0; p];
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for channel in 0..model.channels {
                let cell = model.cell(class as u32, channel);
                for v in g.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                for i in 0..p {
                    let row = &cell.factor[i * p..i * p + i + 1];
                    let s: f64 = row.iter().zip(&g[..=i]).map(|(a, b)| a * b).sum();
                    images.push(cell.mean[i] + s);
                }
            }
            labels.push(class as u32);
        }
    }
    Dataset::new(
        Matrix::from_vec(total, feat, images)?,
        labels,
        model.n_classes,
        model.channels,
        model.n_p,
        split,
    )
}

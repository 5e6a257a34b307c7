//! PCA and FastICA on image data, and matching of pruning masks against the
//! resulting components.

mod io;
mod matching;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

pub use io::ComponentsMetadata;
pub use matching::{
    mask_rows_for_matching, match_masks_to_components, similarity_histogram, write_histogram_csv, MaskMatch,
};

pub const DEFAULT_COMPONENTS: usize = 64;
pub const ICA_TOLERANCE: f64 = 1e-4;
pub const ICA_MAX_ITERATIONS: usize = 200;

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Ica,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub method: Method,
    /// n_components × feature_dim. PCA rows are orthonormal; ICA rows are the
    /// unit-normalized unmixing filters in input space.
    pub components: Matrix,
    /// Feature means subtracted before projecting.
    pub mean: Vec<f64>,
    /// PCA: eigenvalue per component. ICA: eigenvalues of the whitening step.
    pub explained_variance: Vec<f64>,
    /// ICA only: unnormalized unmixing matrix in input space.
    pub unmixing: Option<Matrix>,
    /// ICA only: rotation in whitened space (n_components²).
    pub rotation: Option<Matrix>,
    pub iterations: usize,
    pub converged: bool,
    /// Fewer components than requested were supported by the data.
    pub rank_deficient: bool,
}

impl Components {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.components.cols()
    }

    /// Projections of centered samples onto each component (samples × n).
    pub fn project(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "{} features, components expect {}",
                data.cols(),
                self.feature_dim()
            )));
        }
        let basis = self.unmixing.as_ref().unwrap_or(&self.components);
        let mut out = Matrix::zeros(data.rows(), basis.rows());
        let mut centered = vec![0.0; data.cols()];
        for s in 0..data.rows() {
            for (c, (x, m)) in centered.iter_mut().zip(data.row(s).iter().zip(&self.mean)) {
                *c = x - m;
            }
            for k in 0..basis.rows() {
                out.set(s, k, crate::matrix::dot(basis.row(k), &centered));
            }
        }
        Ok(out)
    }
}

fn centered(data: &Matrix) -> (DMatrix<f64>, Vec<f64>) {
    let (n, d) = (data.rows(), data.cols());
    let mut mean = vec![0.0; d];
    for s in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(s)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let x = DMatrix::from_fn(n, d, |s, f| data.get(s, f) - mean[f]);
    (x, mean)
}

struct Eigen {
    values: Vec<f64>,
    /// Columns are eigenvectors, ordered by decreasing eigenvalue.
    vectors: DMatrix<f64>,
    valid: usize,
}

fn sorted_eigen(cov: DMatrix<f64>, wanted: usize) -> Eigen {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let valid = order
        .iter()
        .take(wanted)
        .take_while(|&&i| eig.eigenvalues[i] > RANK_TOL * top && eig.eigenvalues[i] > 0.0)
        .count();
    let d = eig.eigenvectors.nrows();
    let mut vectors = DMatrix::zeros(d, valid);
    let mut values = Vec::with_capacity(valid);
    for (k, &i) in order.iter().take(valid).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let lead = v.iter().enumerate().fold((0, 0.0f64), |best, (j, x)| if x.abs() > best.1 { (j, x.abs()) } else { best }).0;
        if v[lead] < 0.0 {
            v = -v;
        }
        vectors.set_column(k, &v);
        values.push(eig.eigenvalues[i]);
    }
    Eigen { values, vectors, valid }
}

fn check_request(data: &Dataset, n_components: usize) -> Result<()> {
    let (n, d) = (data.len(), data.feature_dim());
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::InvalidConfig(format!(
            "{n_components} components requested from {n} samples of dimension {d}"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData("decomposition needs at least 2 samples".into()));
    }
    Ok(())
}

fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut cov = x.transpose() * x;
    cov /= n - 1.0;
    cov
}

fn to_matrix(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_vec(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).expect("consistent shape")
}

/// Principal components of the centered sample covariance, by decreasing
/// eigenvalue; each component's largest-magnitude coordinate is positive.
pub fn pca(data: &Dataset, n_components: usize) -> Result<Components> {
    check_request(data, n_components)?;
    let (x, mean) = centered(data.images());
    let eig = sorted_eigen(covariance(&x), n_components);
    if eig.valid == 0 {
        return Err(Error::degenerate(0.0, "input covariance is zero"));
    }
    Ok(Components {
        method: Method::Pca,
        components: to_matrix(&eig.vectors.transpose()),
        mean,
        explained_variance: eig.values,
        unmixing: None,
        rotation: None,
        iterations: 0,
        converged: true,
        rank_deficient: eig.valid < n_components,
    })
}

/// (W Wᵀ)^(−1/2) W.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| 1.0 / l.max(1e-300).sqrt()));
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose() * w
}

/// FastICA with logcosh contrast and symmetric decorrelation on the data
/// whitened to `n_components` principal directions.
pub fn fast_ica(data: &Dataset, n_components: usize, seed: u64) -> Result<Components> {
    check_request(data, n_components)?;
    let (x, mean) = centered(data.images());
    let eig = sorted_eigen(covariance(&x), n_components);
    if eig.valid < n_components {
        return Err(Error::InvalidConfig(format!(
            "data rank {} is below the {n_components} requested components",
            eig.valid
        )));
    }
    let c = n_components;
    // whitening K: c × d
    let scale = DVector::from_iterator(c, eig.values.iter().map(|l| 1.0 / l.sqrt()));
    let k = DMatrix::from_diagonal(&scale) * eig.vectors.transpose();
    let z = &k * x.transpose(); // c × n
    let n = z.ncols() as f64;

    let mut rng = seed::rng(seed);
    let init = DMatrix::from_fn(c, c, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < ICA_MAX_ITERATIONS {
        iterations += 1;
        let u = &w * &z; // c × n
        let g = u.map(f64::tanh);
        let g_prime_mean = DVector::from_iterator(c, g.row_iter().map(|row| row.iter().map(|t| 1.0 - t * t).sum::<f64>() / n));
        let mut next = (&g * z.transpose()) / n;
        for i in 0..c {
            let gp = g_prime_mean[i];
            for j in 0..c {
                next[(i, j)] -= gp * w[(i, j)];
            }
        }
        let next = symmetric_decorrelation(&next);
        let change = (0..c)
            .map(|i| ((next.row(i) * w.row(i).transpose())[0].abs() - 1.0).abs())
            .fold(0.0f64, f64::max);
        w = next;
        if change < ICA_TOLERANCE {
            converged = true;
            break;
        }
    }
    let unmixing = &w * &k;
    let mut comps = unmixing.clone();
    for mut row in comps.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(Components {
        method: Method::Ica,
        components: to_matrix(&comps),
        mean,
        explained_variance: eig.values,
        unmixing: Some(to_matrix(&unmixing)),
        rotation: Some(to_matrix(&w)),
        iterations,
        converged,
        rank_deficient: false,
    })
}

/// Normalized Amari index of a square product matrix P = W·A: zero iff P is
/// a scaled permutation, at most one.
pub fn amari_index(p: &Matrix) -> Result<f64> {
    let n = p.rows();
    if n != p.cols() || n < 2 {
        return Err(Error::Shape(format!("Amari index needs a square matrix of order ≥ 2, got {}x{}", p.rows(), p.cols())));
    }
    let a = |i: usize, j: usize| p.get(i, j).abs();
    let mut total = 0.0;
    for i in 0..n {
        let max = (0..n).map(|j| a(i, j)).fold(0.0, f64::max);
        total += (0..n).map(|j| a(i, j)).sum::<f64>() / max - 1.0;
    }
    for j in 0..n {
        let max = (0..n).map(|i| a(i, j)).fold(0.0, f64::max);
        total += (0..n).map(|i| a(i, j)).sum::<f64>() / max - 1.0;
    }
    Ok(total / (2.0 * n as f64 * (n as f64 - 1.0)))
}

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::clone::regularized_factor;
use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// One-degree bins over edge orientation, which is defined modulo 180°.
/// Classes group contiguous bins, so the class count must divide 180.
pub const ORIENTATION_BINS: u32 = 180;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgesSpec {
    pub n_samples: usize,
    pub n_p: u32,
    pub n_classes: u32,
    pub contrast: f64,
    pub noise_std: f64,
}

/// Step edges: each image is `contrast · ramp(cosθ (x − cx) + sinθ (y − cy))`
/// with a one-pixel linear ramp across the edge, plus i.i.d. Gaussian pixel
/// noise. θ is uniform on the circle, so both polarities occur; the class is
/// the one-degree bin of θ mod 180° grouped into equal ranges, and
/// the edge center is uniform over the central half of the image.
pub fn gen_edges(spec: &EdgesSpec, seed: u64) -> Result<Dataset> {
    gen_edges_annotated(spec, seed).map(|(data, _)| data)
}

/// [`gen_edges`] plus the drawn edge angle of every sample, in degrees on
/// [0, 360).
pub fn gen_edges_annotated(spec: &EdgesSpec, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    if spec.n_classes == 0 || ORIENTATION_BINS % spec.n_classes != 0 {
        return Err(Error::InvalidConfig(format!(
            "class count {} must divide {ORIENTATION_BINS} orientation bins",
            spec.n_classes
        )));
    }
    if spec.n_p == 0 || spec.noise_std < 0.0 || !spec.contrast.is_finite() {
        return Err(Error::InvalidConfig("invalid edge generator parameters".into()));
    }
    let np = spec.n_p as usize;
    let bins_per_class = ORIENTATION_BINS / spec.n_classes;
    let mut rng = seed::rng(seed);
    let mut images = Vec::with_capacity(spec.n_samples * np * np);
    let mut labels = Vec::with_capacity(spec.n_samples);
    let mut angles = Vec::with_capacity(spec.n_samples);
    let half = np as f64 / 2.0;
    for _ in 0..spec.n_samples {
        let degrees = rng.random::<f64>() * 360.0;
        let bin = (degrees as u32) % ORIENTATION_BINS;
        let theta = degrees.to_radians();
        let cx = half / 2.0 + rng.random::<f64>() * half;
        let cy = half / 2.0 + rng.random::<f64>() * half;
        let (s, c) = theta.sin_cos();
        for y in 0..np {
            for x in 0..np {
                let d = c * (x as f64 + 0.5 - cx) + s * (y as f64 + 0.5 - cy);
                let step = (2.0 * d).clamp(-1.0, 1.0);
                let noise = if spec.noise_std > 0.0 {
                    spec.noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                } else {
                    0.0
                };
                images.push(spec.contrast * step + noise);
            }
        }
        labels.push(bin / bins_per_class);
        angles.push(degrees);
    }
    let data = Dataset::new(
        Matrix::from_vec(spec.n_samples, np * np, images)?,
        labels,
        spec.n_classes,
        1,
        spec.n_p,
        Split::Train,
    )?;
    Ok((data, angles))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlgpSpec {
    pub n_samples: usize,
    pub n_p: u32,
    /// Correlation length ξ of the latent field.
    pub correlation_length: f64,
    /// Gain g of the erf nonlinearity.
    pub gain: f64,
}

/// Latent covariance exp(−|Δz|² / 2ξ²) on the pixel grid.
pub fn latent_covariance(n_p: usize, xi: f64) -> nalgebra::DMatrix<f64> {
    let p = n_p * n_p;
    nalgebra::DMatrix::from_fn(p, p, |a, b| {
        let (ay, ax) = ((a / n_p) as f64, (a % n_p) as f64);
        let (by, bx) = ((b / n_p) as f64, (b % n_p) as f64);
        let d2 = (ax - bx).powi(2) + (ay - by).powi(2);
        (-d2 / (2.0 * xi * xi)).exp()
    })
}

/// Variance of erf(g z) for standard normal z.
pub fn erf_gain_variance(gain: f64) -> f64 {
    let g2 = gain * gain;
    2.0 / std::f64::consts::PI * (2.0 * g2 / (1.0 + 2.0 * g2)).asin()
}

/// Nonlinear Gaussian process vs Gaussian control, binary labels.
///
/// Class 1 images are `erf(g z) / Z` with z a unit-variance Gaussian field of
/// correlation length ξ and Z normalizing the pixel variance to one. Class 0
/// images are Gaussian with exactly the covariance of class 1:
/// `C_ab = arcsin(2g² K_ab / (1 + 2g²)) / arcsin(2g² / (1 + 2g²))`.
pub fn gen_nlgp(spec: &NlgpSpec, seed: u64) -> Result<Dataset> {
    if !(spec.correlation_length > 0.0 && spec.gain > 0.0) || spec.n_p == 0 {
        return Err(Error::InvalidConfig(
            "NLGP needs positive correlation length, gain and N_p".into(),
        ));
    }
    let np = spec.n_p as usize;
    let p = np * np;
    let latent = latent_covariance(np, spec.correlation_length);
    let g2 = spec.gain * spec.gain;
    let denom = (2.0 * g2 / (1.0 + 2.0 * g2)).asin();
    let control = latent.map(|k| (2.0 * g2 * k / (1.0 + 2.0 * g2)).asin() / denom);
    let (l_latent, _) = regularized_factor(&latent)?;
    let (l_control, _) = regularized_factor(&control)?;
    let z_norm = erf_gain_variance(spec.gain).sqrt();

    let mut rng = seed::rng(seed);
    let mut images = Vec::with_capacity(spec.n_samples * p);
    let mut labels = Vec::with_capacity(spec.n_samples);
    let mut g = nalgebra::DVector::zeros(p);
    for _ in 0..spec.n_samples {
        let label = rng.random_bool(0.5) as u32;
        for v in g.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        if label == 1 {
            let z = &l_latent * &g;
            images.extend(z.iter().map(|&v| libm::erf(spec.gain * v) / z_norm));
        } else {
            let x = &l_control * &g;
            images.extend(x.iter().copied());
        }
        labels.push(label);
    }
    Dataset::new(
        Matrix::from_vec(spec.n_samples, p, images)?,
        labels,
        2,
        1,
        spec.n_p,
        Split::Train,
    )
}

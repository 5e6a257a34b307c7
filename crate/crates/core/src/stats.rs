//! Kurtosis of preactivations.
//!
//! Population moments, two-pass: the mean is computed (and refined by the
//! mean of residuals), then the second and fourth central moments are
//! accumulated with Neumaier-compensated sums.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{probe_layer, Parameters};
use crate::pruning::Mask;

pub const GAUSSIAN_KURTOSIS: f64 = 3.0;
/// Cells with fewer samples are reported as missing.
pub const MIN_CELL_SAMPLES: usize = 8;
const VARIANCE_FLOOR: f64 = 1e-12;

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Central moments (mean, m2, m4) with population normalization.
pub(crate) fn central_moments(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mut s = CompensatedSum::default();
    samples.iter().for_each(|&x| s.add(x));
    let mut mean = s.value() / n;
    let mut r = CompensatedSum::default();
    samples.iter().for_each(|&x| r.add(x - mean));
    mean += r.value() / n;

    let mut m2 = CompensatedSum::default();
    let mut m4 = CompensatedSum::default();
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2.add(d2);
        m4.add(d2 * d2);
    }
    (mean, m2.value() / n, m4.value() / n)
}

/// E[(x − Ex)⁴] / (E[(x − Ex)²])².
pub fn kurtosis(samples: &[f64]) -> Result<f64> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "kurtosis needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    let (_, m2, m4) = central_moments(samples);
    let mean_abs = samples.iter().map(|x| x.abs()).sum::<f64>() / samples.len() as f64;
    if !(m2 > VARIANCE_FLOOR * mean_abs * mean_abs) || m2 == 0.0 {
        return Err(Error::degenerate(m2, "kurtosis"));
    }
    Ok(m4 / (m2 * m2))
}

/// |3 − kurt|
pub fn excess_kurtosis(samples: &[f64]) -> Result<f64> {
    Ok((GAUSSIAN_KURTOSIS - kurtosis(samples)?).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtosisCell {
    pub layer: usize,
    pub unit: usize,
    pub class: u32,
    pub n_samples: usize,
    /// `None` when the cell is degenerate or too small.
    pub kurtosis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: u32,
    pub n_samples: usize,
    pub valid_units: usize,
    pub mean_kurtosis: Option<f64>,
    pub mean_excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtosisSummary {
    pub layer: usize,
    pub round: Option<u32>,
    /// Mean over classes of the per-class mean over units.
    pub grand_mean_kurtosis: Option<f64>,
    pub grand_mean_excess: Option<f64>,
    pub missing_cells: usize,
    pub classes: Vec<ClassSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KurtosisReport {
    pub cells: Vec<KurtosisCell>,
    pub summary: KurtosisSummary,
}

fn mean(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Kurtosis of hidden layer `layer` (1-based) preactivations, per (unit,
/// class), on a held-out split.
pub fn preactivation_kurtosis(params: &Parameters, mask: &Mask, data: &Dataset, layer: usize) -> Result<KurtosisReport> {
    if data.split() != Split::Test {
        return Err(Error::InvalidConfig(
            "preactivation statistics are computed on the test split".into(),
        ));
    }
    let probe = probe_layer(params, mask, data.images(), layer)?;
    let pre = &probe.preactivations;
    let classes: Vec<(u32, Vec<usize>)> = (0..data.n_classes()).map(|c| (c, data.class_indices(c))).collect();

    let cells: Vec<KurtosisCell> = (0..pre.rows())
        .into_par_iter()
        .flat_map_iter(|unit| {
            let row = pre.row(unit);
            classes.iter().map(move |(class, idx)| {
                let vals: Vec<f64> = idx.iter().map(|&i| row[i]).collect();
                let kurtosis = if vals.len() >= MIN_CELL_SAMPLES {
                    kurtosis(&vals).ok()
                } else {
                    None
                };
                KurtosisCell {
                    layer,
                    unit,
                    class: *class,
                    n_samples: vals.len(),
                    kurtosis,
                }
            })
        })
        .collect();

    Ok(summarize(layer, cells, data))
}

fn summarize(layer: usize, cells: Vec<KurtosisCell>, data: &Dataset) -> KurtosisReport {
    let counts = data.class_counts();
    let classes: Vec<ClassSummary> = (0..data.n_classes())
        .map(|c| {
            let ks: Vec<f64> = cells
                .iter()
                .filter(|cell| cell.class == c)
                .filter_map(|cell| cell.kurtosis)
                .collect();
            ClassSummary {
                class: c,
                n_samples: counts[c as usize],
                valid_units: ks.len(),
                mean_kurtosis: mean(ks.iter().copied()),
                mean_excess: mean(ks.iter().map(|k| (GAUSSIAN_KURTOSIS - k).abs())),
            }
        })
        .collect();
    let summary = KurtosisSummary {
        layer,
        round: None,
        grand_mean_kurtosis: mean(classes.iter().filter_map(|c| c.mean_kurtosis)),
        grand_mean_excess: mean(classes.iter().filter_map(|c| c.mean_excess)),
        missing_cells: cells.iter().filter(|c| c.kurtosis.is_none()).count(),
        classes,
    };
    KurtosisReport { cells, summary }
}

impl KurtosisReport {
    pub fn with_round(mut self, round: u32) -> Self {
        self.summary.round = Some(round);
        self
    }

    /// Rows `(layer, unit, class, n_samples, kurtosis)`; missing cells leave
    /// the kurtosis field empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "unit", "class", "n_samples", "kurtosis"])?;
        for c in &self.cells {
            w.write_record([
                c.layer.to_string(),
                c.unit.to_string(),
                c.class.to_string(),
                c.n_samples.to_string(),
                c.kurtosis.map(|k| k.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn rademacher_is_exactly_one() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(kurtosis(&xs).unwrap(), 1.0);
        assert_eq!(excess_kurtosis(&xs).unwrap(), 2.0);
    }

    #[test]
    fn uniform_is_nine_fifths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..400_000).map(|_| u.sample(&mut rng)).collect();
        assert!((kurtosis(&xs).unwrap() - 1.8).abs() < 0.02);
    }

    #[test]
    fn laplace_excess_is_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Uniform::new(-0.5, 0.5).unwrap();
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let v: f64 = u.sample(&mut rng);
                -v.signum() * (1.0 - 2.0 * v.abs()).ln()
            })
            .collect();
        assert!((excess_kurtosis(&xs).unwrap() - 3.0).abs() < 0.1);
    }

    #[test]
    fn gaussian_excess_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(excess_kurtosis(&xs).unwrap() < 0.05);
    }

    #[test]
    fn constant_is_degenerate() {
        let xs = vec![2.5; 100];
        assert!(matches!(kurtosis(&xs), Err(Error::DegenerateVariance { .. })));
        assert!(matches!(kurtosis(&[0.0; 10]), Err(Error::DegenerateVariance { .. })));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(kurtosis(&[1.0, 2.0, 3.0]), Err(Error::InsufficientData(_))));
    }
}

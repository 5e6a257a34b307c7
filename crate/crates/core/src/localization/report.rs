use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{correlation_map, fit_gaussian2d, ChannelMode, CorrelationMap, GaussianFit};
use crate::error::{Error, Result};
use crate::pruning::{LayerMask, Mask};

/// Default unit count for width reports.
pub const DEFAULT_TOP_UNITS: usize = 120;

/// Units ordered by kept-weight count (descending, ties by index), first `k`.
pub fn select_top_units(layer: &LayerMask, k: usize) -> Vec<usize> {
    let mut units: Vec<(usize, usize)> = (0..layer.rows()).map(|i| (layer.row_kept(i), i)).collect();
    units.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    units.into_iter().take(k).map(|(_, i)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFit {
    pub round: u32,
    pub unit: usize,
    pub kept_count: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub mse: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundWidthSummary {
    pub round: u32,
    pub sparsity: f64,
    pub n_selected: usize,
    pub n_fitted: usize,
    pub n_excluded: usize,
    pub mean_sigma_x: f64,
    pub median_sigma_x: f64,
    pub mean_sigma_y: f64,
    pub median_sigma_y: f64,
    pub mean_mse: f64,
    pub median_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub channel_mode: ChannelMode,
    pub units: Vec<UnitFit>,
    pub rounds: Vec<RoundWidthSummary>,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl RoundWidthSummary {
    /// Summary statistics over fitted units of one round.
    pub fn from_units(round: u32, sparsity: f64, n_selected: usize, units: &[&UnitFit]) -> Self {
        let sx: Vec<f64> = units.iter().map(|u| u.sigma_x).collect();
        let sy: Vec<f64> = units.iter().map(|u| u.sigma_y).collect();
        let mse: Vec<f64> = units.iter().map(|u| u.mse).collect();
        Self {
            round,
            sparsity,
            n_selected,
            n_fitted: units.len(),
            n_excluded: n_selected - units.len(),
            mean_sigma_x: mean(&sx),
            median_sigma_x: median(&sx),
            mean_sigma_y: mean(&sy),
            median_sigma_y: median(&sy),
            mean_mse: mean(&mse),
            median_mse: median(&mse),
        }
    }
}

/// Correlation maps of the top-`k` units of a first-layer mask.
pub fn unit_maps(layer: &LayerMask, k: usize, n_p: usize, channels: usize, mode: ChannelMode) -> Result<Vec<CorrelationMap>> {
    select_top_units(layer, k)
        .into_par_iter()
        .map(|u| correlation_map(u, layer.row(u), n_p, channels, mode))
        .collect()
}

/// Fit the top-`k` units of layer 1 for every mask in `history`.
pub fn rf_width_report(history: &[Mask], k: usize, n_p: usize, channels: usize, mode: ChannelMode) -> Result<LocalizationReport> {
    let mut units = Vec::new();
    let mut rounds = Vec::new();
    for mask in history {
        let layer = mask.layers().first().ok_or(Error::EmptyNetwork)?;
        let maps = unit_maps(layer, k, n_p, channels, mode)?;
        let fits: Vec<Option<UnitFit>> = maps
            .par_iter()
            .map(|map| -> Result<Option<UnitFit>> {
                match fit_gaussian2d(map) {
                    Ok(f) => Ok(Some(unit_row(mask.round(), layer.row_kept(map.unit), map.unit, &f))),
                    Err(Error::InsufficientData(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let fitted: Vec<UnitFit> = fits.into_iter().flatten().collect();
        let refs: Vec<&UnitFit> = fitted.iter().collect();
        rounds.push(RoundWidthSummary::from_units(mask.round(), layer.sparsity(), maps.len(), &refs));
        units.extend(fitted);
    }
    Ok(LocalizationReport {
        channel_mode: mode,
        units,
        rounds,
    })
}

fn unit_row(round: u32, kept_count: usize, unit: usize, f: &GaussianFit) -> UnitFit {
    UnitFit {
        round,
        unit,
        kept_count,
        sigma_x: f.sigma_x,
        sigma_y: f.sigma_y,
        mu_x: f.mu_x,
        mu_y: f.mu_y,
        amplitude: f.amplitude,
        offset: f.offset,
        mse: f.mse,
        converged: f.converged,
    }
}

impl LocalizationReport {
    pub fn round(&self, round: u32) -> Option<&RoundWidthSummary> {
        self.rounds.iter().find(|r| r.round == round)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["round", "unit", "kept_count", "sigma_x", "sigma_y", "mse", "converged"])?;
        for u in &self.units {
            w.write_record([
                u.round.to_string(),
                u.unit.to_string(),
                u.kept_count.to_string(),
                u.sigma_x.to_string(),
                u.sigma_y.to_string(),
                u.mse.to_string(),
                u.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.rounds)?)?;
        Ok(())
    }
}

/// Binary greymap (P5), values scaled so the maximum maps to 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!("{} values for a {width}x{height} image", values.len())));
    }
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values.iter().map(|v| (v.max(0.0) * scale).round().min(255.0) as u8).collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

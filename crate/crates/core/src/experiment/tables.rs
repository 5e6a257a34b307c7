//! Row types of the CSV tables under `reports/`. Every row carries the
//! pipeline hash and master seed it was produced under.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpRoundRow {
    pub config_hash: String,
    pub seed: u64,
    pub round: u32,
    /// Sparsity of the first in-scope layer under m(round).
    pub sparsity: f64,
    pub kept: usize,
    /// Loss and test accuracy of the training run that produced m(round).
    pub final_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtosisRow {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub round: u32,
    pub sparsity: f64,
    pub layer: usize,
    pub mean_kurtosis: Option<f64>,
    /// Mean over classes of the per-class mean |3 − kurt|.
    pub mean_excess: Option<f64>,
    pub missing_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtosisClassRow {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub round: u32,
    pub layer: usize,
    pub class: u32,
    pub valid_units: usize,
    pub mean_kurtosis: Option<f64>,
    pub mean_excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitWidthRow {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub round: u32,
    pub unit: usize,
    pub kept_count: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub mse: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSummaryRow {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub round: u32,
    pub sparsity: f64,
    pub n_selected: usize,
    pub n_fitted: usize,
    pub n_excluded: usize,
    pub mean_sigma_x: f64,
    pub median_sigma_x: f64,
    pub mean_sigma_y: f64,
    pub median_sigma_y: f64,
    pub median_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityWeightRow {
    pub config_hash: String,
    pub seed: u64,
    pub eval_round: u32,
    pub unit: usize,
    pub input: usize,
    pub removal_round: String,
    pub score: Option<f64>,
    pub n_classes_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityGroupRow {
    pub config_hash: String,
    pub seed: u64,
    pub eval_round: u32,
    /// Removal round, or `survivor`.
    pub group: String,
    pub size: usize,
    pub scored: usize,
    pub mean_score: Option<f64>,
    /// Mean score times the surviving-weight count at the evaluation round.
    pub normalized_mean: Option<f64>,
    pub n_weights_remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaMatchRow {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub round: u32,
    pub unit: usize,
    pub best_component: Option<usize>,
    pub similarity: f64,
    pub zero_row: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

/// One line per IMP round of the aggregated report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub seed: u64,
    pub round: u32,
    pub sparsity: f64,
    /// Sparsity in percent, two decimals.
    pub sparsity_pct: String,
    pub test_accuracy: Option<f64>,
    pub median_sigma_x: Option<f64>,
    pub mean_sigma_x: Option<f64>,
    pub mean_excess_layer1: Option<f64>,
    pub mean_excess_layer2: Option<f64>,
}

/// IMP against the oneshot and random baselines at the final sparsity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub round: u32,
    pub sparsity: f64,
    pub mean_sigma_x: Option<f64>,
    pub median_sigma_x: Option<f64>,
    pub mean_excess_layer1: Option<f64>,
    pub mean_excess_layer2: Option<f64>,
}

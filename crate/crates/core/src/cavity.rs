//! Leave-one-weight-out ("cavity") attribution of first-layer weights.
//!
//! For unit i with bias-free preactivation λ_i(X) = Σ_k W_ik X̃_k, removing
//! weight j gives λ_i^(−j) = λ_i − W_ij X̃_j. The score is the kurtosis change
//! normalized by kurt(λ_i), signed so that a positive score means the removal
//! moves the preactivation further from Gaussian:
//!
//! ```text
//! kurt(λ) > 3:  (kurt(λ^(−j)) − kurt(λ)) / kurt(λ)
//! kurt(λ) < 3:  (kurt(λ) − kurt(λ^(−j))) / kurt(λ)
//! kurt(λ) = 3:  0 (flagged)
//! ```
//!
//! Scores are computed per class and averaged over the classes where both
//! kurtoses are defined.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{probe_layer, Parameters};
use crate::pruning::{ImpHistory, Mask};
use crate::stats::{kurtosis, GAUSSIAN_KURTOSIS};

/// When each weight of a layer leaves the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    /// Pruned at this IMP round (0 for weights never present).
    Removed(u32),
    Survivor,
}

impl std::fmt::Display for Fate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fate::Removed(r) => write!(f, "{r}"),
            Fate::Survivor => f.write_str("survivor"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalSchedule {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub rounds: u32,
    pub fraction: f64,
    fates: Vec<Fate>,
}

impl RemovalSchedule {
    /// Derive fates from a nested mask history m(0), m(1), ..., m(N).
    pub fn from_masks(masks: &[Mask], layer: usize, fraction: f64) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InsufficientData("empty mask history".into()))?;
        if layer >= first.n_layers() {
            return Err(Error::Shape(format!("layer {layer} not in mask")));
        }
        let (rows, cols) = first.shapes()[layer];
        for pair in masks.windows(2) {
            if !pair[1].is_nested_in(&pair[0]) {
                return Err(Error::InvalidConfig(format!(
                    "mask of round {} is not nested in round {}",
                    pair[1].round(),
                    pair[0].round()
                )));
            }
        }
        let mut fates = vec![Fate::Survivor; rows * cols];
        for (idx, fate) in fates.iter_mut().enumerate() {
            if !first.layer(layer).bits()[idx] {
                *fate = Fate::Removed(0);
                continue;
            }
            for (r, m) in masks.iter().enumerate().skip(1) {
                if !m.layer(layer).bits()[idx] {
                    *fate = Fate::Removed(r as u32);
                    break;
                }
            }
        }
        Ok(Self {
            layer,
            rows,
            cols,
            rounds: (masks.len() - 1) as u32,
            fraction,
            fates,
        })
    }

    pub fn from_history(history: &ImpHistory, layer: usize) -> Result<Self> {
        let masks: Vec<Mask> = history.rounds.iter().map(|r| r.mask.clone()).collect();
        Self::from_masks(&masks, layer, history.schedule.fraction)
    }

    pub fn fate(&self, i: usize, j: usize) -> Fate {
        self.fates[i * self.cols + j]
    }
}

/// N_W(n) = N (1 − s)^n, rounded to the nearest integer.
pub fn weights_remaining(total: usize, fraction: f64, round: u32) -> usize {
    (total as f64 * (1.0 - fraction).powi(round as i32)).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityScore {
    pub score: f64,
    /// kurt(λ) was exactly 3, so the score is the neutral 0.
    pub neutral: bool,
}

/// Normalized kurtosis change between the full and the cavity preactivation.
pub fn cavity_from_kurtoses(base: f64, removed: f64) -> CavityScore {
    if base > GAUSSIAN_KURTOSIS {
        CavityScore {
            score: (removed - base) / base,
            neutral: false,
        }
    } else if base < GAUSSIAN_KURTOSIS {
        CavityScore {
            score: (base - removed) / base,
            neutral: false,
        }
    } else {
        CavityScore {
            score: 0.0,
            neutral: true,
        }
    }
}

/// λ^(−j) = λ − w_j x_j, elementwise over samples.
pub fn leave_one_out(preacts: &[f64], weight: f64, input: &[f64]) -> Vec<f64> {
    preacts.iter().zip(input).map(|(l, x)| l - weight * x).collect()
}

/// Cavity score of weight `j` of one unit. `preacts` are the bias-free
/// preactivations per sample, `inputs` the (normalized) layer inputs,
/// samples x fan_in.
pub fn cavity_score(weight_row: &[f64], preacts: &[f64], inputs: &Matrix, j: usize) -> Result<CavityScore> {
    if inputs.rows() != preacts.len() || inputs.cols() != weight_row.len() || j >= weight_row.len() {
        return Err(Error::Shape("cavity_score arguments disagree in shape".into()));
    }
    let base = kurtosis(preacts)?;
    if weight_row[j] == 0.0 {
        return Ok(CavityScore {
            score: 0.0,
            neutral: false,
        });
    }
    let removed = leave_one_out(preacts, weight_row[j], &inputs.column(j));
    let k_removed = kurtosis(&removed)
        .map_err(|_| Error::degenerate(0.0, format!("removing weight {j} leaves a constant preactivation")))?;
    Ok(cavity_from_kurtoses(base, k_removed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScore {
    pub layer: usize,
    pub unit: usize,
    pub input: usize,
    pub fate: Fate,
    /// Mean over valid classes; `None` when no class gave a defined score.
    pub score: Option<f64>,
    pub n_classes_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityGroup {
    pub fate: Fate,
    pub size: usize,
    pub scored: usize,
    pub mean_score: Option<f64>,
    pub normalized_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavitySummary {
    /// Index k of the mask m(k) the preactivations were measured under.
    pub evaluation_round: u32,
    pub n_weights_remaining: usize,
    pub remaining_in_mask: usize,
    pub groups: Vec<CavityGroup>,
    pub excluded_weights: usize,
    pub neutral_cells: usize,
    pub degenerate_cells: usize,
    pub classes_used: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityReport {
    pub scores: Vec<WeightScore>,
    pub summary: CavitySummary,
}

impl CavityReport {
    pub fn group(&self, fate: Fate) -> Option<&CavityGroup> {
        self.summary.groups.iter().find(|g| g.fate == fate)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "i", "j", "removal_round", "score", "n_classes_valid"])?;
        for s in &self.scores {
            w.write_record([
                s.layer.to_string(),
                s.unit.to_string(),
                s.input.to_string(),
                s.fate.to_string(),
                s.score.map(|v| v.to_string()).unwrap_or_default(),
                s.n_classes_valid.to_string(),
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

#[derive(Debug, Clone, Default)]
pub struct CavityOptions {
    /// Restrict the per-class computation to these classes.
    pub class_subset: Option<Vec<u32>>,
}

/// Cavity scores of every weight alive in `mask` (first hidden layer), with
/// preactivations of `params ⊙ mask` on the test split.
pub fn cavity_report(
    params: &Parameters,
    mask: &Mask,
    data: &Dataset,
    schedule: &RemovalSchedule,
    options: &CavityOptions,
) -> Result<CavityReport> {
    if data.split() != Split::Test {
        return Err(Error::InvalidConfig("cavity scores are computed on the test split".into()));
    }
    let layer = schedule.layer;
    if layer != 0 {
        return Err(Error::InvalidConfig("cavity scores are defined for the first hidden layer".into()));
    }
    let (rows, cols) = (schedule.rows, schedule.cols);
    if mask.shapes().get(layer) != Some(&(rows, cols)) {
        return Err(Error::Shape("removal schedule does not match mask".into()));
    }
    let probe = probe_layer(params, mask, data.images(), layer + 1)?;
    let effective = params.masked(mask)?;
    let weights = &effective.layers[layer].weight;
    let bias = &effective.layers[layer].bias;

    let classes: Vec<u32> = match &options.class_subset {
        Some(sub) => {
            if let Some(bad) = sub.iter().find(|&&c| c >= data.n_classes()) {
                return Err(Error::InvalidConfig(format!("class {bad} not in dataset")));
            }
            sub.clone()
        }
        None => (0..data.n_classes()).collect(),
    };
    let class_idx: Vec<Vec<usize>> = classes.iter().map(|&c| data.class_indices(c)).collect();
    // Per class, inputs as columns (fan_in x n_c) for contiguous access.
    let class_inputs: Vec<Matrix> = class_idx
        .iter()
        .map(|idx| probe.inputs.select_rows(idx).transpose())
        .collect();

    struct UnitResult {
        scores: Vec<WeightScore>,
        neutral: usize,
        degenerate: usize,
    }

    let mask_layer = mask.layer(layer);
    let per_unit: Vec<UnitResult> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let alive: Vec<usize> = (0..cols).filter(|&j| mask_layer.get(i, j)).collect();
            let mut sums = vec![0.0; alive.len()];
            let mut valid = vec![0usize; alive.len()];
            let (mut neutral, mut degenerate) = (0, 0);
            let lambda_row = probe.preactivations.row(i);
            for (idx, xin) in class_idx.iter().zip(&class_inputs) {
                let lambda: Vec<f64> = idx.iter().map(|&s| lambda_row[s] - bias[i]).collect();
                let Ok(base) = kurtosis(&lambda) else {
                    degenerate += alive.len();
                    continue;
                };
                for (a, &j) in alive.iter().enumerate() {
                    let w = weights.get(i, j);
                    if w == 0.0 {
                        valid[a] += 1;
                        continue;
                    }
                    let removed = leave_one_out(&lambda, w, xin.row(j));
                    match kurtosis(&removed) {
                        Ok(k) => {
                            let c = cavity_from_kurtoses(base, k);
                            neutral += c.neutral as usize;
                            sums[a] += c.score;
                            valid[a] += 1;
                        }
                        Err(_) => degenerate += 1,
                    }
                }
            }
            let scores = alive
                .iter()
                .enumerate()
                .map(|(a, &j)| WeightScore {
                    layer,
                    unit: i,
                    input: j,
                    fate: schedule.fate(i, j),
                    score: (valid[a] > 0).then(|| sums[a] / valid[a] as f64),
                    n_classes_valid: valid[a],
                })
                .collect();
            UnitResult {
                scores,
                neutral,
                degenerate,
            }
        })
        .collect();

    let mut scores = Vec::new();
    let (mut neutral, mut degenerate) = (0, 0);
    for u in per_unit {
        scores.extend(u.scores);
        neutral += u.neutral;
        degenerate += u.degenerate;
    }

    let round = mask.round();
    let n_w = weights_remaining(rows * cols, schedule.fraction, round);
    let mut grouped: BTreeMap<Fate, (usize, usize, f64)> = BTreeMap::new();
    for s in &scores {
        let e = grouped.entry(s.fate).or_insert((0, 0, 0.0));
        e.0 += 1;
        if let Some(v) = s.score {
            e.1 += 1;
            e.2 += v;
        }
    }
    let groups = grouped
        .into_iter()
        .map(|(fate, (size, scored, sum))| {
            let mean = (scored > 0).then(|| sum / scored as f64);
            CavityGroup {
                fate,
                size,
                scored,
                mean_score: mean,
                normalized_mean: mean.map(|m| m * n_w as f64),
            }
        })
        .collect();

    let summary = CavitySummary {
        evaluation_round: round,
        n_weights_remaining: n_w,
        remaining_in_mask: mask_layer.kept(),
        groups,
        excluded_weights: scores.iter().filter(|s| s.score.is_none()).count(),
        neutral_cells: neutral,
        degenerate_cells: degenerate,
        classes_used: classes,
    };
    Ok(CavityReport { scores, summary })
}

#[cfg(test)]
mod tests;

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Components;
use crate::error::{Error, Result};
use crate::localization::{pixel_support, ChannelMode};
use crate::matrix::dot;
use crate::pruning::LayerMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMatch {
    pub row: usize,
    pub best_component: Option<usize>,
    /// max over components of |cos(mask row, component)|.
    pub similarity: f64,
    pub zero_row: bool,
}

/// Mask rows as 0/1 vectors over the full input dimension. In union mode a
/// pixel kept in any channel is set in every channel.
pub fn mask_rows_for_matching(layer: &LayerMask, n_p: usize, channels: usize, mode: ChannelMode) -> Result<Vec<Vec<f64>>> {
    let p = n_p * n_p;
    (0..layer.rows())
        .map(|r| {
            let row = layer.row(r);
            Ok(match mode {
                ChannelMode::PerChannel => {
                    pixel_support(row, n_p, channels, mode)?;
                    row.iter().map(|&b| f64::from(u8::from(b))).collect()
                }
                ChannelMode::Union => {
                    let support = pixel_support(row, n_p, channels, mode)?.remove(0);
                    (0..channels * p).map(|i| f64::from(u8::from(support[i % p]))).collect()
                }
            })
        })
        .collect()
}

/// Best absolute cosine similarity of each mask row over all components.
pub fn match_masks_to_components(rows: &[Vec<f64>], components: &Components) -> Result<Vec<MaskMatch>> {
    let comps = &components.components;
    let norms: Vec<f64> = (0..comps.rows()).map(|k| dot(comps.row(k), comps.row(k)).sqrt()).collect();
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            if row.len() != comps.cols() {
                return Err(Error::Shape(format!(
                    "mask row {r} has {} entries, components have {}",
                    row.len(),
                    comps.cols()
                )));
            }
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                return Ok(MaskMatch {
                    row: r,
                    best_component: None,
                    similarity: 0.0,
                    zero_row: true,
                });
            }
            let mut best = (None, 0.0f64);
            for k in 0..comps.rows() {
                if norms[k] == 0.0 {
                    continue;
                }
                let cos = (dot(row, comps.row(k)) / (norm * norms[k])).abs().min(1.0);
                if best.0.is_none() || cos > best.1 {
                    best = (Some(k), cos);
                }
            }
            Ok(MaskMatch {
                row: r,
                best_component: best.0,
                similarity: best.1,
                zero_row: false,
            })
        })
        .collect()
}

/// Counts of similarities in `bins` equal-width bins over [0, 1].
pub fn similarity_histogram(matches: &[MaskMatch], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins.max(1)];
    let last = counts.len() - 1;
    for m in matches.iter().filter(|m| !m.zero_row) {
        let b = ((m.similarity * counts.len() as f64) as usize).min(last);
        counts[b] += 1;
    }
    counts
}

pub fn write_histogram_csv(path: &Path, counts: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    let width = 1.0 / counts.len() as f64;
    for (i, c) in counts.iter().enumerate() {
        w.write_record([
            (i as f64 * width).to_string(),
            ((i + 1) as f64 * width).to_string(),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

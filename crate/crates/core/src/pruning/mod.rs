//! Pruning masks and the IMP / oneshot / random pruning drivers.

mod imp;
mod io;
mod mask;

pub use imp::{imp_run, ImpHistory, RoundRecord};
pub use io::MaskSidecar;
pub use mask::{LayerMask, Mask};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    #[default]
    FirstLayerOnly,
    AllLayers,
}

impl PruneScope {
    pub fn layers(self, n_layers: usize) -> std::ops::Range<usize> {
        match self {
            PruneScope::FirstLayerOnly => 0..1.min(n_layers),
            PruneScope::AllLayers => 0..n_layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    /// Fraction of the remaining weights pruned each round.
    pub fraction: f64,
    pub rounds: u32,
    #[serde(default)]
    pub scope: PruneScope,
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "per-round fraction {} must lie in (0, 1)",
                self.fraction
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("need at least one pruning round".into()));
        }
        Ok(())
    }

    /// Kept count after `round` rounds starting from `total` weights.
    pub fn kept_after(&self, total: usize, round: u32) -> usize {
        (0..round).fold(total, |kept, _| kept - prune_count(self.fraction, kept))
    }
}

/// Number of weights pruned from `kept`: round-half-to-even of `fraction * kept`.
pub fn prune_count(fraction: f64, kept: usize) -> usize {
    ((fraction * kept as f64).round_ties_even() as usize).min(kept)
}

/// Prune the `round(fraction * K)` smallest-magnitude surviving weights of one
/// layer (`K` = surviving count). Ties go to the lower index.
pub fn prune_layer(weights: &[f64], prev: &[bool], fraction: f64) -> Result<Vec<bool>> {
    if weights.len() != prev.len() {
        return Err(Error::Shape(format!(
            "{} weights but {} mask entries",
            weights.len(),
            prev.len()
        )));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "prune fraction {fraction} must lie in [0, 1)"
        )));
    }
    let mut alive: Vec<usize> = (0..weights.len()).filter(|&i| prev[i]).collect();
    if alive.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    let count = prune_count(fraction, alive.len());
    let mut out = prev.to_vec();
    if count == 0 {
        return Ok(out);
    }
    alive.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()).then(a.cmp(&b)));
    for &i in &alive[..count] {
        out[i] = false;
    }
    Ok(out)
}

/// Layer-wise magnitude pruning of the layers in `scope`; other layers keep
/// their previous mask.
pub fn magnitude_mask(params: &Parameters, prev: &Mask, fraction: f64, scope: PruneScope) -> Result<Mask> {
    prev.check_shapes(&params.shapes())?;
    let mut next = prev.clone();
    for l in scope.layers(params.n_layers()) {
        let bits = prune_layer(params.layers[l].weight.as_slice(), prev.layers()[l].bits(), fraction)?;
        next.layer_mut(l).set_bits(bits)?;
    }
    next.set_round(prev.round() + 1);
    Ok(next)
}

/// Single-shot magnitude pruning of dense trained weights to `target_sparsity`.
pub fn oneshot_prune(trained: &Parameters, target_sparsity: f64, scope: PruneScope) -> Result<Mask> {
    if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target sparsity {target_sparsity} must lie in (0, 1)"
        )));
    }
    let ones = Mask::ones(&trained.shapes());
    let mut m = magnitude_mask(trained, &ones, target_sparsity, scope)?;
    m.set_round(0);
    Ok(m)
}

/// Uniformly random mask keeping exactly `round((1 - target) * K)` weights in
/// each in-scope layer.
pub fn random_mask(
    shapes: &[(usize, usize)],
    target_sparsity: f64,
    seed: u64,
    scope: PruneScope,
) -> Result<Mask> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::InvalidConfig(format!(
            "target sparsity {target_sparsity} must lie in [0, 1)"
        )));
    }
    let counts: Vec<usize> = shapes
        .iter()
        .map(|&(r, c)| {
            let total = r * c;
            (((1.0 - target_sparsity) * total as f64).round_ties_even() as usize).min(total)
        })
        .collect();
    random_mask_with_counts(shapes, &counts, seed, scope)
}

/// Random mask with the same per-layer kept counts as `reference`.
pub fn random_mask_matching(reference: &Mask, seed: u64, scope: PruneScope) -> Result<Mask> {
    let counts: Vec<usize> = (0..reference.n_layers()).map(|l| reference.kept(l)).collect();
    let mut m = random_mask_with_counts(&reference.shapes(), &counts, seed, scope)?;
    m.set_round(reference.round());
    Ok(m)
}

/// Random mask keeping exactly `counts[l]` weights in each in-scope layer l.
pub fn random_mask_with_counts(
    shapes: &[(usize, usize)],
    counts: &[usize],
    seed: u64,
    scope: PruneScope,
) -> Result<Mask> {
    if shapes.iter().any(|&(r, c)| r == 0 || c == 0) {
        return Err(Error::Shape("zero-sized layer".into()));
    }
    let mut mask = Mask::ones(shapes);
    for l in scope.layers(shapes.len()) {
        let (rows, cols) = shapes[l];
        let total = rows * cols;
        let mut rng = seed::stream_rng(seed, l as u64);
        let mut bits = vec![false; total];
        for i in sample(&mut rng, total, counts[l].min(total)) {
            bits[i] = true;
        }
        mask.layer_mut(l).set_bits(bits)?;
    }
    Ok(mask)
}

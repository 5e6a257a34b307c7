use serde::{Deserialize, Serialize};

use super::{backward, forward_unmasked, softmax_cross_entropy, Mode, Parameters, BN_MOMENTUM};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pruning::Mask;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub rewind_iteration: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds the batch order.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rewind_iteration >= self.total_iterations {
            return Err(Error::InvalidConfig(format!(
                "rewind iteration {} must be < total iterations {}",
                self.rewind_iteration, self.total_iterations
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        // Zero is accepted so that a run can exercise only the running statistics.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Maps an iteration index to the sample indices of its mini-batch.
///
/// Each epoch is a fresh permutation drawn from stream `epoch` of the batch
/// seed; the trailing partial batch of an epoch is dropped. Because the
/// mapping depends only on `(seed, iteration)`, training can resume from any
/// checkpoint and replay the exact same batches.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    seed: u64,
    n_samples: usize,
    batch_size: usize,
    cached_epoch: Option<u64>,
    permutation: Vec<usize>,
}

impl BatchSchedule {
    pub fn new(seed: u64, n_samples: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > n_samples {
            return Err(Error::InvalidConfig(format!(
                "batch size {batch_size} incompatible with {n_samples} samples"
            )));
        }
        Ok(Self {
            seed,
            n_samples,
            batch_size,
            cached_epoch: None,
            permutation: Vec::new(),
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        (self.n_samples / self.batch_size) as u64
    }

    pub fn batch(&mut self, iteration: u64) -> &[usize] {
        use rand::seq::SliceRandom;
        let bpe = self.batches_per_epoch();
        let epoch = iteration / bpe;
        let pos = (iteration % bpe) as usize;
        if self.cached_epoch != Some(epoch) {
            let mut rng = seed::stream_rng(self.seed, epoch);
            self.permutation = (0..self.n_samples).collect();
            self.permutation.shuffle(&mut rng);
            self.cached_epoch = Some(epoch);
        }
        &self.permutation[pos * self.batch_size..(pos + 1) * self.batch_size]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Loss of every iteration run, in order.
    pub loss_trace: Vec<f64>,
    /// Parameters as they stood at `rewind_iteration`, when that point lies
    /// inside the trained span.
    pub rewind: Option<Parameters>,
}

/// Plain mini-batch SGD on softmax cross-entropy, from `start_iteration` up to
/// `cfg.total_iterations`. Masked weights are zeroed up front and never receive
/// updates.
pub fn train(
    params: &Parameters,
    mask: &Mask,
    data: &Dataset,
    cfg: &TrainConfig,
    start_iteration: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if start_iteration > cfg.total_iterations {
        return Err(Error::InvalidConfig(format!(
            "start iteration {start_iteration} beyond total {}",
            cfg.total_iterations
        )));
    }
    let mut params = params.masked(mask)?;
    if data.feature_dim() != params.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} features, network expects {}",
            data.feature_dim(),
            params.input_dim()
        )));
    }
    let mut schedule = BatchSchedule::new(cfg.seed, data.len(), cfg.batch_size)?;
    let mut loss_trace = Vec::with_capacity((cfg.total_iterations - start_iteration) as usize);
    let mut rewind = None;
    let images = data.images();
    let labels = data.labels();

    for it in start_iteration..cfg.total_iterations {
        if it == cfg.rewind_iteration {
            rewind = Some(params.clone());
        }
        let idx = schedule.batch(it);
        let batch = images.select_rows(idx);
        let batch_labels: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();

        let pass = forward_unmasked(&params, &batch, Mode::Train)?;
        let (loss, d_logits) = softmax_cross_entropy(pass.logits(), &batch_labels)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, loss });
        }
        loss_trace.push(loss);
        let grads = backward(&params, &pass, &d_logits);

        let lr = cfg.learning_rate;
        let n = batch.rows() as f64;
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let keep = mask.layers()[l].bits();
            for ((w, &g), &k) in layer
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(grads.weight[l].as_slice())
                .zip(keep)
            {
                if k {
                    *w -= lr * g;
                }
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.bias[l]) {
                *b -= lr * g;
            }
            if let Some(bn) = layer.bn.as_mut() {
                if let (Some(dg), Some(db)) = (&grads.gamma[l], &grads.beta[l]) {
                    for (p, g) in bn.gamma.iter_mut().zip(dg) {
                        *p -= lr * g;
                    }
                    for (p, g) in bn.beta.iter_mut().zip(db) {
                        *p -= lr * g;
                    }
                }
                if let Some(cache) = &pass.norm[l] {
                    let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                    for j in 0..bn.running_mean.len() {
                        bn.running_mean[j] =
                            BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * cache.mean[j];
                        bn.running_var[j] = BN_MOMENTUM * bn.running_var[j]
                            + (1.0 - BN_MOMENTUM) * cache.var[j] * unbias;
                    }
                }
            }
        }
    }
    if cfg.rewind_iteration == cfg.total_iterations {
        rewind = Some(params.clone());
    }
    Ok(TrainOutcome {
        params,
        loss_trace,
        rewind,
    })
}

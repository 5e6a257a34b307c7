use super::{magnitude_mask, Mask, PruneSchedule};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{init_params, train, Checkpoint, ModelConfig, Parameters, TrainConfig};

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: u32,
    /// m(n); round 0 holds the dense all-ones mask.
    pub mask: Mask,
    /// Sparsity of every layer after this round.
    pub sparsity: Vec<f64>,
    pub kept: Vec<usize>,
    /// θ(T) of the training run that produced this mask, i.e. trained under
    /// m(n-1). `None` for round 0.
    pub trained: Option<Parameters>,
    pub final_loss: Option<f64>,
    pub loss_trace: Vec<f64>,
}

impl RoundRecord {
    fn new(mask: Mask, trained: Option<Parameters>, loss_trace: Vec<f64>) -> Self {
        let n = mask.n_layers();
        Self {
            round: mask.round(),
            sparsity: (0..n).map(|l| mask.sparsity(l)).collect(),
            kept: (0..n).map(|l| mask.kept(l)).collect(),
            final_loss: loss_trace.last().copied(),
            mask,
            trained,
            loss_trace,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImpHistory {
    pub schedule: PruneSchedule,
    /// θ(t_rewind) of the dense run.
    pub rewind: Checkpoint,
    /// Records for rounds 0..=N_IMP.
    pub rounds: Vec<RoundRecord>,
}

impl ImpHistory {
    pub fn mask(&self, round: u32) -> &Mask {
        &self.rounds[round as usize].mask
    }

    pub fn final_mask(&self) -> &Mask {
        &self.rounds.last().expect("round 0 always present").mask
    }

    /// Parameters of the dense run at T (round 1's training).
    pub fn dense_trained(&self) -> Option<&Parameters> {
        self.rounds.get(1).and_then(|r| r.trained.as_ref())
    }
}

/// Train, prune, rewind: round 1 trains the dense network from
/// initialization and captures θ(t_rewind); round n ≥ 2 trains
/// θ(t_rewind) ⊙ m(n-1) from iteration t_rewind to T. Every round derives
/// m(n) from |θ(T) ⊙ m(n-1)|. `on_round` sees each record as it is produced.
pub fn imp_run(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    schedule: &PruneSchedule,
    data: &Dataset,
    mut on_round: impl FnMut(&RoundRecord, &Checkpoint) -> Result<()>,
) -> Result<ImpHistory> {
    model.validate()?;
    model.check_dataset(data)?;
    train_cfg.validate()?;
    schedule.validate()?;

    let init = init_params(model)?;
    let dense = Mask::ones(&init.shapes());
    let mut rounds = vec![RoundRecord::new(dense.clone(), None, Vec::new())];

    let wrap = |round: u32| move |e: Error| Error::RoundFailed { round, source: Box::new(e) };

    let first = train(&init, &dense, data, train_cfg, 0).map_err(wrap(1))?;
    let rewind_params = first
        .rewind
        .clone()
        .expect("rewind iteration < total iterations");
    let rewind = Checkpoint::capture(&rewind_params, train_cfg.rewind_iteration, train_cfg, model.hash());
    on_round(&rounds[0], &rewind)?;

    let mut mask = magnitude_mask(&first.params, &dense, schedule.fraction, schedule.scope).map_err(wrap(1))?;
    let record = RoundRecord::new(mask.clone(), Some(first.params), first.loss_trace);
    on_round(&record, &rewind)?;
    rounds.push(record);

    for n in 2..=schedule.rounds {
        let out = train(&rewind_params, &mask, data, train_cfg, train_cfg.rewind_iteration).map_err(wrap(n))?;
        let next = magnitude_mask(&out.params, &mask, schedule.fraction, schedule.scope).map_err(wrap(n))?;
        let record = RoundRecord::new(next.clone(), Some(out.params), out.loss_trace);
        on_round(&record, &rewind)?;
        rounds.push(record);
        mask = next;
    }

    Ok(ImpHistory {
        schedule: *schedule,
        rewind,
        rounds,
    })
}

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use super::run_dir::{RunDir, RunLock, Stage};
use super::tables::*;
use crate::cavity::{cavity_report, CavityOptions, RemovalSchedule};
use crate::data::{
    fit_gaussian_clone, gen_edges, gen_nlgp, sample_clone, standardize_pair, DType, Dataset, DatasetSidecar, Split,
};
use crate::decomp::{
    fast_ica, mask_rows_for_matching, match_masks_to_components, similarity_histogram, ComponentsMetadata,
};
use crate::error::{Error, Result};
use crate::localization::{correlation_map, rf_width_report, select_top_units, write_pgm, LocalizationReport};
use crate::nn::{accuracy, init_params, train, Checkpoint, ModelConfig, Parameters};
use crate::pruning::{imp_run, oneshot_prune, random_mask_with_counts, Mask, MaskSidecar};
use crate::seed::labels;
use crate::stats::preactivation_kurtosis;

pub const IMP: &str = "imp";
pub const ONESHOT: &str = "oneshot";
pub const RANDOM: &str = "random";

/// A set of masks from one pruning driver. IMP carries every round; the
/// baselines carry a single mask at the final IMP sparsity.
#[derive(Debug, Clone)]
pub struct MaskFamily {
    pub name: &'static str,
    pub masks: Vec<Mask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub iterations: u64,
    pub final_loss: f64,
    pub test_accuracy: f64,
}

/// Cheap handle on an experiment's run directory. Commands that write take
/// the directory lock for their whole duration.
pub struct Experiment {
    cfg: ExperimentConfig,
    dir: RunDir,
    _lock: RunLock,
}

impl Experiment {
    /// Validate `cfg`, lock its output directory and record the config there.
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = RunDir::new(&cfg.output_dir);
        let lock = dir.lock()?;
        dir.create()?;
        dir.write_config(&cfg)?;
        Ok(Self { cfg, dir, _lock: lock })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &RunDir {
        &self.dir
    }

    fn hash(&self) -> String {
        self.cfg.pipeline_hash()
    }

    // ---- data ----

    pub fn gen(&self) -> Result<(Dataset, Dataset)> {
        let cfg = &self.cfg;
        let train_seed = cfg.derived_seed(labels::DATA_TRAIN);
        let test_seed = cfg.derived_seed(labels::DATA_TEST);
        let source = &cfg.data.source;
        let (mut tr, mut te, generator) = match source {
            DataSource::Edges { n_train, n_test, .. } => (
                gen_edges(&source.edges_spec(*n_train).expect("edges"), train_seed)?,
                gen_edges(&source.edges_spec(*n_test).expect("edges"), test_seed)?,
                "edges",
            ),
            DataSource::Nlgp { n_train, n_test, .. } => (
                gen_nlgp(&source.nlgp_spec(*n_train).expect("nlgp"), train_seed)?,
                gen_nlgp(&source.nlgp_spec(*n_test).expect("nlgp"), test_seed)?,
                "nlgp",
            ),
            DataSource::File { train_path, test_path } => (Dataset::load(train_path)?, Dataset::load(test_path)?, "file"),
        };
        tr = tr.with_split(Split::Train);
        te = te.with_split(Split::Test);
        if tr.feature_dim() != te.feature_dim() || tr.n_classes() != te.n_classes() {
            return Err(Error::InvalidConfig("train and test splits disagree on shape or classes".into()));
        }
        let mut generator = generator.to_string();
        if cfg.data.gaussian_clone {
            let model = fit_gaussian_clone(&tr)?;
            let ctr = sample_clone(&model, &tr.class_counts(), cfg.derived_seed(labels::CLONE_TRAIN), Split::Train)?;
            let cte = sample_clone(&model, &te.class_counts(), cfg.derived_seed(labels::CLONE_TEST), Split::Test)?;
            tr = ctr;
            te = cte;
            generator = format!("{generator}+gaussian-clone");
        }
        let params = serde_json::to_value(&cfg.data)?;
        for (data, name, seed) in [(&tr, "train", train_seed), (&te, "test", test_seed)] {
            data.save(&self.dir.data(&format!("{name}.plds")), DType::F64)?;
            DatasetSidecar {
                generator: generator.clone(),
                seed,
                parameters: params.clone(),
                n_samples: data.len(),
                class_counts: data.class_counts(),
                split: data.split(),
            }
            .save(&self.dir.data(&format!("{name}.json")))?;
        }
        self.dir.stamp(Stage::Gen, cfg)?;
        Ok((tr, te))
    }

    /// Train and test splits, standardized with train statistics.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        self.dir.require(Stage::Gen, &self.cfg)?;
        let tr = Dataset::load(&self.dir.data("train.plds"))?.with_split(Split::Train);
        let te = Dataset::load(&self.dir.data("test.plds"))?.with_split(Split::Test);
        Ok(standardize_pair(&tr, &te))
    }

    fn model_config(&self, data: &Dataset) -> Result<ModelConfig> {
        let m = self.cfg.model_config(data);
        m.validate()?;
        m.check_dataset(data)?;
        Ok(m)
    }

    fn checkpoint(&self, params: &Parameters, iteration: u64) -> Checkpoint {
        Checkpoint::capture(params, iteration, &self.cfg.train_config(), self.cfg.pipeline_hash_u64())
    }

    fn load_checkpoint(&self, name: &str) -> Result<Checkpoint> {
        let path = self.dir.checkpoint(name);
        let ck = Checkpoint::load(&path)?;
        let expected = self.cfg.pipeline_hash_u64();
        if ck.config_hash != expected {
            return Err(Error::StaleArtifact {
                path,
                expected: format!("{expected:016x}"),
                found: format!("{:016x}", ck.config_hash),
            });
        }
        Ok(ck)
    }

    // ---- training and pruning ----

    /// Dense training from initialization; writes the rewind and final
    /// checkpoints.
    pub fn train(&self) -> Result<TrainSummary> {
        let (tr, te) = self.load_data()?;
        let model = self.model_config(&tr)?;
        let tc = self.cfg.train_config();
        let init = init_params(&model)?;
        let dense = Mask::ones(&init.shapes());
        let start = Instant::now();
        let out = train(&init, &dense, &tr, &tc, 0)?;
        let elapsed = start.elapsed().as_secs_f64();
        let rewind = out.rewind.as_ref().expect("rewind iteration < total iterations");
        self.checkpoint(rewind, tc.rewind_iteration).save(&self.dir.checkpoint("rewind.plck"))?;
        self.checkpoint(&out.params, tc.total_iterations).save(&self.dir.checkpoint("dense.plck"))?;
        write_loss_log(&self.dir.log("train_loss.csv"), 0, &out.loss_trace)?;
        std::fs::write(
            self.dir.log("train_wallclock.json"),
            serde_json::to_string_pretty(&serde_json::json!({ "seconds": elapsed }))?,
        )?;
        let summary = TrainSummary {
            config_hash: self.hash(),
            seed: self.cfg.seed,
            iterations: tc.total_iterations,
            final_loss: out.loss_trace.last().copied().unwrap_or(f64::NAN),
            test_accuracy: accuracy(&out.params, &dense, &te)?,
        };
        std::fs::write(self.dir.report("train.json"), serde_json::to_string_pretty(&summary)?)?;
        self.dir.stamp(Stage::Train, &self.cfg)?;
        Ok(summary)
    }

    /// The full IMP loop. Also writes the dense and rewind checkpoints, so a
    /// separate `train` is not needed.
    pub fn imp(&self) -> Result<Vec<ImpRoundRow>> {
        let (tr, te) = self.load_data()?;
        let model = self.model_config(&tr)?;
        let tc = self.cfg.train_config();
        let schedule = self.cfg.schedule;
        let hash = self.hash();
        let scoped = schedule.scope.layers(model.n_layers()).start;
        let mut rows = Vec::new();
        let mut clock = Vec::new();
        let mut last = Instant::now();
        let mut prev_mask: Option<Mask> = None;
        let history = imp_run(&model, &tc, &schedule, &tr, |rec, rewind| {
            let name = format!("imp_round_{:02}", rec.round);
            rec.mask.save(&self.dir.mask(&format!("{name}.plmk")))?;
            MaskSidecar::describe(&rec.mask, IMP, Some(schedule), &hash).save(&self.dir.mask(&format!("{name}.json")))?;
            let mut test_accuracy = None;
            if let (Some(params), Some(prev)) = (&rec.trained, &prev_mask) {
                self.checkpoint(params, tc.total_iterations).save(&self.dir.checkpoint(&format!("{name}.plck")))?;
                if rec.round == 1 {
                    self.checkpoint(&rewind.params, tc.rewind_iteration).save(&self.dir.checkpoint("rewind.plck"))?;
                    self.checkpoint(params, tc.total_iterations).save(&self.dir.checkpoint("dense.plck"))?;
                }
                let start = if rec.round == 1 { 0 } else { tc.rewind_iteration };
                write_loss_log(&self.dir.log(&format!("{name}_loss.csv")), start, &rec.loss_trace)?;
                test_accuracy = Some(accuracy(params, prev, &te)?);
            }
            // Round 0 only records the dense mask; its training time is
            // charged to round 1.
            if rec.round > 0 {
                clock.push((rec.round, last.elapsed().as_secs_f64(), rec.final_loss));
                last = Instant::now();
            }
            rows.push(ImpRoundRow {
                config_hash: hash.clone(),
                seed: self.cfg.seed,
                round: rec.round,
                sparsity: rec.sparsity[scoped],
                kept: rec.kept[scoped],
                final_loss: rec.final_loss,
                test_accuracy,
            });
            prev_mask = Some(rec.mask.clone());
            Ok(())
        })?;
        drop(history);
        write_rows(&self.dir.report("imp_rounds.csv"), &rows)?;
        let mut w = csv::Writer::from_path(self.dir.log("imp_wallclock.csv"))?;
        w.write_record(["round", "seconds", "final_loss"])?;
        for (round, secs, loss) in clock {
            w.write_record([round.to_string(), format!("{secs:.3}"), loss.map(|l| l.to_string()).unwrap_or_default()])?;
        }
        w.flush()?;
        self.dir.stamp(Stage::Train, &self.cfg)?;
        self.dir.stamp(Stage::Imp, &self.cfg)?;
        Ok(rows)
    }

    /// Per-layer kept counts after all IMP rounds, for the baselines.
    fn final_counts(&self, shapes: &[(usize, usize)]) -> Vec<usize> {
        let s = &self.cfg.schedule;
        let scoped = s.scope.layers(shapes.len());
        shapes
            .iter()
            .enumerate()
            .map(|(l, &(r, c))| {
                if scoped.contains(&l) {
                    s.kept_after(r * c, s.rounds)
                } else {
                    r * c
                }
            })
            .collect()
    }

    /// Magnitude pruning of the dense trained network straight to the final
    /// IMP sparsity.
    pub fn oneshot(&self) -> Result<Mask> {
        self.dir.require(Stage::Train, &self.cfg)?;
        let dense = self.load_checkpoint("dense.plck")?;
        let shapes = dense.params.shapes();
        let counts = self.final_counts(&shapes);
        let first = self.cfg.schedule.scope.layers(shapes.len()).start;
        let total = shapes[first].0 * shapes[first].1;
        let target = 1.0 - counts[first] as f64 / total as f64;
        let mut mask = oneshot_prune(&dense.params, target, self.cfg.schedule.scope)?;
        mask.set_round(self.cfg.schedule.rounds);
        self.save_baseline(&mask, ONESHOT)?;
        self.dir.stamp(Stage::Oneshot, &self.cfg)?;
        Ok(mask)
    }

    /// Uniformly random mask with the final IMP kept count in every layer.
    pub fn randprune(&self) -> Result<Mask> {
        let (tr, _) = self.load_data()?;
        let model = self.model_config(&tr)?;
        let shapes: Vec<(usize, usize)> = model.layer_sizes.windows(2).map(|w| (w[1], w[0])).collect();
        let counts = self.final_counts(&shapes);
        let mut mask = random_mask_with_counts(
            &shapes,
            &counts,
            self.cfg.derived_seed(labels::RANDOM_MASK),
            self.cfg.schedule.scope,
        )?;
        mask.set_round(self.cfg.schedule.rounds);
        self.save_baseline(&mask, RANDOM)?;
        self.dir.stamp(Stage::Randprune, &self.cfg)?;
        Ok(mask)
    }

    fn save_baseline(&self, mask: &Mask, family: &str) -> Result<()> {
        mask.save(&self.dir.mask(&format!("{family}.plmk")))?;
        MaskSidecar::describe(mask, family, Some(self.cfg.schedule), &self.hash())
            .save(&self.dir.mask(&format!("{family}.json")))
    }

    // ---- loading ----

    pub fn imp_masks(&self) -> Result<Vec<Mask>> {
        self.dir.require(Stage::Imp, &self.cfg)?;
        (0..=self.cfg.schedule.rounds)
            .map(|r| Mask::load(&self.dir.mask(&format!("imp_round_{r:02}.plmk"))))
            .collect()
    }

    pub fn rewind_params(&self) -> Result<Parameters> {
        self.dir.require(Stage::Imp, &self.cfg)?;
        Ok(self.load_checkpoint("rewind.plck")?.params)
    }

    /// IMP plus whichever baselines have been produced.
    pub fn families(&self) -> Result<Vec<MaskFamily>> {
        let mut out = vec![MaskFamily {
            name: IMP,
            masks: self.imp_masks()?,
        }];
        for (stage, name) in [(Stage::Oneshot, ONESHOT), (Stage::Randprune, RANDOM)] {
            if self.dir.optional(stage, &self.cfg)? {
                out.push(MaskFamily {
                    name,
                    masks: vec![Mask::load(&self.dir.mask(&format!("{name}.plmk")))?],
                });
            }
        }
        Ok(out)
    }

    // ---- analyses ----

    /// Preactivation kurtosis of θ(t_rewind) ⊙ m on the test split, for every
    /// mask of every family.
    pub fn analyze_kurtosis(&self) -> Result<Vec<KurtosisRow>> {
        let (_, te) = self.load_data()?;
        let params = self.rewind_params()?;
        let hash = self.hash();
        let mut rows = Vec::new();
        let mut class_rows = Vec::new();
        for family in self.families()? {
            for mask in &family.masks {
                for &layer in &self.cfg.analysis.kurtosis_layers {
                    let rep = preactivation_kurtosis(&params, mask, &te, layer)?;
                    let s = &rep.summary;
                    rows.push(KurtosisRow {
                        config_hash: hash.clone(),
                        seed: self.cfg.seed,
                        family: family.name.into(),
                        round: mask.round(),
                        sparsity: mask.sparsity(0),
                        layer,
                        mean_kurtosis: s.grand_mean_kurtosis,
                        mean_excess: s.grand_mean_excess,
                        missing_cells: s.missing_cells,
                    });
                    class_rows.extend(s.classes.iter().map(|c| KurtosisClassRow {
                        config_hash: hash.clone(),
                        seed: self.cfg.seed,
                        family: family.name.into(),
                        round: mask.round(),
                        layer,
                        class: c.class,
                        valid_units: c.valid_units,
                        mean_kurtosis: c.mean_kurtosis,
                        mean_excess: c.mean_excess,
                    }));
                }
            }
        }
        write_rows(&self.dir.report("kurtosis_summary.csv"), &rows)?;
        write_rows(&self.dir.report("kurtosis_classes.csv"), &class_rows)?;
        self.dir.stamp(Stage::Kurtosis, &self.cfg)?;
        Ok(rows)
    }

    /// RF widths of the top units of every mask; also dumps the final IMP
    /// masks and correlation maps of those units as PGM images.
    pub fn analyze_localization(&self) -> Result<Vec<WidthSummaryRow>> {
        let (tr, _) = self.load_data()?;
        let (n_p, channels) = (tr.n_p() as usize, tr.channels() as usize);
        let mode = self.cfg.analysis.channel_mode;
        let hash = self.hash();
        let mut units = Vec::new();
        let mut summary = Vec::new();
        for family in self.families()? {
            let width = family.masks[0].layer(0).rows();
            let k = self.cfg.localization_k(width);
            let rep: LocalizationReport = rf_width_report(&family.masks, k, n_p, channels, mode)?;
            units.extend(rep.units.iter().map(|u| UnitWidthRow {
                config_hash: hash.clone(),
                seed: self.cfg.seed,
                family: family.name.into(),
                round: u.round,
                unit: u.unit,
                kept_count: u.kept_count,
                sigma_x: u.sigma_x,
                sigma_y: u.sigma_y,
                mse: u.mse,
                converged: u.converged,
            }));
            summary.extend(rep.rounds.iter().map(|r| WidthSummaryRow {
                config_hash: hash.clone(),
                seed: self.cfg.seed,
                family: family.name.into(),
                round: r.round,
                sparsity: r.sparsity,
                n_selected: r.n_selected,
                n_fitted: r.n_fitted,
                n_excluded: r.n_excluded,
                mean_sigma_x: r.mean_sigma_x,
                median_sigma_x: r.median_sigma_x,
                mean_sigma_y: r.mean_sigma_y,
                median_sigma_y: r.median_sigma_y,
                median_mse: r.median_mse,
            }));
            if family.name == IMP {
                self.dump_maps(family.masks.last().expect("round 0 present"), k, n_p, channels)?;
            }
        }
        write_rows(&self.dir.report("localization_units.csv"), &units)?;
        write_rows(&self.dir.report("localization_summary.csv"), &summary)?;
        self.dir.stamp(Stage::Localization, &self.cfg)?;
        Ok(summary)
    }

    fn dump_maps(&self, mask: &Mask, k: usize, n_p: usize, channels: usize) -> Result<()> {
        let dir = self.dir.report("maps");
        std::fs::create_dir_all(&dir)?;
        let layer = mask.layer(0);
        for unit in select_top_units(layer, k) {
            let map = correlation_map(unit, layer.row(unit), n_p, channels, self.cfg.analysis.channel_mode)?;
            let side = map.side();
            let values: Vec<f64> = map.values().iter().map(|&v| v as f64).collect();
            write_pgm(&dir.join(format!("unit_{unit:04}_correlation.pgm")), side, side, &values)?;
            let pixels: Vec<f64> = (0..n_p * n_p)
                .map(|p| (0..channels).any(|c| layer.get(unit, c * n_p * n_p + p)) as u8 as f64)
                .collect();
            write_pgm(&dir.join(format!("unit_{unit:04}_mask.pgm")), n_p, n_p, &pixels)?;
        }
        Ok(())
    }

    /// Cavity scores under m(r) for each configured round r, grouped by the
    /// round in which each weight is eventually removed.
    pub fn analyze_cavity(&self) -> Result<Vec<CavityGroupRow>> {
        let (_, te) = self.load_data()?;
        let params = self.rewind_params()?;
        let masks = self.imp_masks()?;
        let removal = RemovalSchedule::from_masks(&masks, 0, self.cfg.schedule.fraction)?;
        let hash = self.hash();
        let mut groups = Vec::new();
        for &round in &self.cfg.analysis.cavity_rounds {
            let rep = cavity_report(&params, &masks[round as usize], &te, &removal, &CavityOptions::default())?;
            let weights: Vec<CavityWeightRow> = rep
                .scores
                .iter()
                .map(|s| CavityWeightRow {
                    config_hash: hash.clone(),
                    seed: self.cfg.seed,
                    eval_round: round,
                    unit: s.unit,
                    input: s.input,
                    removal_round: s.fate.to_string(),
                    score: s.score,
                    n_classes_valid: s.n_classes_valid,
                })
                .collect();
            write_rows(&self.dir.report(&format!("cavity_round_{round:02}.csv")), &weights)?;
            rep.write_json(&self.dir.report(&format!("cavity_round_{round:02}.json")))?;
            groups.extend(rep.summary.groups.iter().map(|g| CavityGroupRow {
                config_hash: hash.clone(),
                seed: self.cfg.seed,
                eval_round: round,
                group: g.fate.to_string(),
                size: g.size,
                scored: g.scored,
                mean_score: g.mean_score,
                normalized_mean: g.normalized_mean,
                n_weights_remaining: rep.summary.n_weights_remaining,
            }));
        }
        write_rows(&self.dir.report("cavity_groups.csv"), &groups)?;
        self.dir.stamp(Stage::Cavity, &self.cfg)?;
        Ok(groups)
    }

    /// FastICA on the standardized training images, then the best-matching
    /// component of every final-round mask row.
    pub fn analyze_ica(&self) -> Result<Vec<IcaMatchRow>> {
        let (tr, _) = self.load_data()?;
        let n = self.cfg.analysis.ica_components.min(tr.feature_dim());
        let seed = self.cfg.derived_seed(labels::ICA);
        let comps = fast_ica(&tr, n, seed)?;
        comps.save(&self.dir.report("ica_components.plcp"))?;
        ComponentsMetadata::describe(&comps, Some(seed), "data/train.plds").save(&self.dir.report("ica_components.json"))?;
        let hash = self.hash();
        let bins = self.cfg.analysis.histogram_bins;
        let mut rows = Vec::new();
        let mut hist = Vec::new();
        for family in self.families()? {
            let mask = family.masks.last().expect("non-empty family");
            let mask_rows = mask_rows_for_matching(
                mask.layer(0),
                tr.n_p() as usize,
                tr.channels() as usize,
                self.cfg.analysis.channel_mode,
            )?;
            let matches = match_masks_to_components(&mask_rows, &comps)?;
            rows.extend(matches.iter().map(|m| IcaMatchRow {
                config_hash: hash.clone(),
                seed: self.cfg.seed,
                family: family.name.into(),
                round: mask.round(),
                unit: m.row,
                best_component: m.best_component,
                similarity: m.similarity,
                zero_row: m.zero_row,
            }));
            for (b, count) in similarity_histogram(&matches, bins).into_iter().enumerate() {
                hist.push(HistogramRow {
                    config_hash: hash.clone(),
                    seed: self.cfg.seed,
                    family: family.name.into(),
                    bin_low: b as f64 / bins as f64,
                    bin_high: (b + 1) as f64 / bins as f64,
                    count,
                });
            }
        }
        write_rows(&self.dir.report("ica_match.csv"), &rows)?;
        write_rows(&self.dir.report("ica_similarity_histogram.csv"), &hist)?;
        self.dir.stamp(Stage::IcaMatch, &self.cfg)?;
        Ok(rows)
    }
}

fn write_loss_log(path: &Path, start: u64, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([(start + i as u64).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

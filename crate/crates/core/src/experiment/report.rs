use serde::{Deserialize, Serialize};

use super::pipeline::{Experiment, IMP};
use super::run_dir::Stage;
use super::tables::*;
use crate::error::Result;

/// Everything `report` aggregates, also written as `reports/report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub rounds: Vec<SummaryRow>,
    pub families: Vec<FamilyRow>,
    pub cavity: Vec<CavityGroupRow>,
}

impl ExperimentReport {
    pub fn final_round(&self) -> Option<&SummaryRow> {
        self.rounds.last()
    }

    pub fn family(&self, name: &str) -> Option<&FamilyRow> {
        self.families.iter().find(|f| f.family == name)
    }
}

fn excess(rows: &[KurtosisRow], family: &str, round: u32, layer: usize) -> Option<f64> {
    rows.iter()
        .find(|r| r.family == family && r.round == round && r.layer == layer)
        .and_then(|r| r.mean_excess)
}

impl Experiment {
    /// Join the per-stage tables into per-round and per-family summaries.
    /// Only the IMP stage is required; absent analyses leave empty columns.
    pub fn report(&self) -> Result<ExperimentReport> {
        let cfg = self.config();
        let dir = self.dir();
        dir.require(Stage::Imp, cfg)?;
        let imp: Vec<ImpRoundRow> = read_rows(&dir.report("imp_rounds.csv"))?;
        let widths: Vec<WidthSummaryRow> = if dir.optional(Stage::Localization, cfg)? {
            read_rows(&dir.report("localization_summary.csv"))?
        } else {
            Vec::new()
        };
        let kurt: Vec<KurtosisRow> = if dir.optional(Stage::Kurtosis, cfg)? {
            read_rows(&dir.report("kurtosis_summary.csv"))?
        } else {
            Vec::new()
        };
        let cavity: Vec<CavityGroupRow> = if dir.optional(Stage::Cavity, cfg)? {
            read_rows(&dir.report("cavity_groups.csv"))?
        } else {
            Vec::new()
        };
        let hash = cfg.pipeline_hash();
        let width = |family: &str, round: u32| widths.iter().find(|w| w.family == family && w.round == round);

        let rounds: Vec<SummaryRow> = imp
            .iter()
            .map(|r| SummaryRow {
                config_hash: hash.clone(),
                seed: cfg.seed,
                round: r.round,
                sparsity: r.sparsity,
                sparsity_pct: format!("{:.2}", 100.0 * r.sparsity),
                test_accuracy: r.test_accuracy,
                median_sigma_x: width(IMP, r.round).map(|w| w.median_sigma_x),
                mean_sigma_x: width(IMP, r.round).map(|w| w.mean_sigma_x),
                mean_excess_layer1: excess(&kurt, IMP, r.round, 1),
                mean_excess_layer2: excess(&kurt, IMP, r.round, 2),
            })
            .collect();

        let last = cfg.schedule.rounds;
        let families: Vec<FamilyRow> = self
            .families()?
            .iter()
            .map(|f| {
                let mask = f.masks.last().expect("non-empty family");
                FamilyRow {
                    config_hash: hash.clone(),
                    seed: cfg.seed,
                    family: f.name.into(),
                    round: last,
                    sparsity: mask.sparsity(0),
                    mean_sigma_x: width(f.name, last).map(|w| w.mean_sigma_x),
                    median_sigma_x: width(f.name, last).map(|w| w.median_sigma_x),
                    mean_excess_layer1: excess(&kurt, f.name, last, 1),
                    mean_excess_layer2: excess(&kurt, f.name, last, 2),
                }
            })
            .collect();

        write_rows(&dir.report("summary_rounds.csv"), &rounds)?;
        write_rows(&dir.report("summary_families.csv"), &families)?;
        write_rows(&dir.report("summary_cavity.csv"), &cavity)?;
        let report = ExperimentReport {
            config_hash: hash,
            seed: cfg.seed,
            rounds,
            families,
            cavity,
        };
        std::fs::write(dir.report("report.json"), serde_json::to_string_pretty(&report)?)?;
        dir.stamp(Stage::Report, cfg)?;
        Ok(report)
    }
}

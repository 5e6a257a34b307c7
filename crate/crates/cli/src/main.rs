use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prunelab::data::{fit_gaussian_clone, gen_edges, gen_nlgp, sample_clone, DType, Dataset, DatasetSidecar, EdgesSpec, NlgpSpec, Split};
use prunelab::experiment::{Experiment, ExperimentConfig, ExperimentReport};
use prunelab::Error;

/// Iterative magnitude pruning experiments on small fully connected networks.
#[derive(Parser)]
#[command(name = "prunelab", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the run directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override any config field, e.g. `--set train.learning_rate=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets: the config's splits, or a standalone file with --out.
    Gen {
        #[command(subcommand)]
        kind: Option<GenKind>,
    },
    /// Dense training run, saving the rewind and final checkpoints.
    Train,
    /// Iterative magnitude pruning with rewinding.
    Imp,
    /// One-shot magnitude baseline matched to the final IMP sparsity.
    Oneshot,
    /// Random baseline matched to the final IMP kept counts.
    Randprune,
    /// Analyses over saved masks and checkpoints.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// Aggregate every available table into summaries.
    Report,
}

#[derive(Subcommand)]
enum GenKind {
    /// Oriented binary edges.
    Edges(EdgesArgs),
    /// Nonlinear Gaussian process images.
    Nlgp(NlgpArgs),
    /// Per-class Gaussian clone of an existing dataset.
    Clone(CloneArgs),
}

#[derive(Args)]
struct EdgesArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,
    #[arg(long, default_value_t = 16)]
    n_p: u32,
    #[arg(long, default_value_t = 4)]
    n_classes: u32,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
}

#[derive(Args)]
struct NlgpArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,
    #[arg(long, default_value_t = 16)]
    n_p: u32,
    #[arg(long, default_value_t = 2.0)]
    correlation_length: f64,
    #[arg(long, default_value_t = 3.0)]
    gain: f64,
}

#[derive(Args)]
struct CloneArgs {
    /// Source dataset (standalone mode).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Analysis {
    Kurtosis,
    Localization,
    Cavity,
    IcaMatch,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => 2,
        Error::StaleArtifact { .. } => 3,
        e if e.is_divergence() => 4,
        _ => 1,
    }
}

/// Parse `VALUE` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{spec}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one part");
    let mut node = table;
    for part in parents {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{part}` in `{key}` is not a table")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Error> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("this command needs --config".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    if let Some(seed) = g.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    if let Some(dir) = &g.output_dir {
        table.insert("output_dir".into(), toml::Value::String(dir.display().to_string()));
    }
    for spec in &g.overrides {
        apply_override(&mut table, spec)?;
    }
    let merged = toml::to_string(&table).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    ExperimentConfig::from_toml_str(&merged)
}

fn save_standalone(data: &Dataset, out: &Path, generator: &str, seed: u64, parameters: serde_json::Value) -> Result<(), Error> {
    data.save(out, DType::F64)?;
    DatasetSidecar {
        generator: generator.into(),
        seed,
        parameters,
        n_samples: data.len(),
        class_counts: data.class_counts(),
        split: data.split(),
    }
    .save(&out.with_extension("json"))?;
    println!("wrote {} ({} samples, {} classes)", out.display(), data.len(), data.n_classes());
    Ok(())
}

fn standalone_gen(kind: &GenKind, seed: u64) -> Result<(), Error> {
    let need_out = |out: &Option<PathBuf>| {
        out.clone()
            .ok_or_else(|| Error::InvalidConfig("standalone generation needs --out (or pass --config)".into()))
    };
    match kind {
        GenKind::Edges(a) => {
            let out = need_out(&a.out)?;
            let spec = EdgesSpec {
                n_samples: a.n_samples,
                n_p: a.n_p,
                n_classes: a.n_classes,
                contrast: a.contrast,
                noise_std: a.noise_std,
            };
            let data = gen_edges(&spec, seed)?;
            let params = serde_json::json!({
                "n_p": a.n_p, "n_classes": a.n_classes, "contrast": a.contrast, "noise_std": a.noise_std,
            });
            save_standalone(&data, &out, "edges", seed, params)
        }
        GenKind::Nlgp(a) => {
            let out = need_out(&a.out)?;
            let spec = NlgpSpec {
                n_samples: a.n_samples,
                n_p: a.n_p,
                correlation_length: a.correlation_length,
                gain: a.gain,
            };
            let data = gen_nlgp(&spec, seed)?;
            let params = serde_json::json!({
                "n_p": a.n_p, "correlation_length": a.correlation_length, "gain": a.gain,
            });
            save_standalone(&data, &out, "nlgp", seed, params)
        }
        GenKind::Clone(a) => {
            let out = need_out(&a.out)?;
            let input = a
                .input
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("standalone clone needs --input".into()))?;
            let source = Dataset::load(input)?;
            let model = fit_gaussian_clone(&source)?;
            let split: Split = source.split();
            let data = sample_clone(&model, &source.class_counts(), seed, split)?;
            let params = serde_json::json!({ "source": input.display().to_string() });
            save_standalone(&data, &out, "gaussian-clone", seed, params)
        }
    }
}

fn config_gen(mut cfg: ExperimentConfig, kind: Option<&GenKind>) -> Result<(), Error> {
    match kind {
        None => {}
        Some(GenKind::Clone(_)) => cfg.data.gaussian_clone = true,
        Some(GenKind::Edges(_)) if cfg.data.source.name() == "edges" => {}
        Some(GenKind::Nlgp(_)) if cfg.data.source.name() == "nlgp" => {}
        Some(_) => {
            return Err(Error::InvalidConfig(format!(
                "config data kind is `{}`; drop the generator argument or pass --out for a standalone file",
                cfg.data.source.name()
            )))
        }
    }
    let exp = Experiment::open(cfg)?;
    let (tr, te) = exp.gen()?;
    println!("wrote {} train / {} test samples to {}", tr.len(), te.len(), exp.dir().root().display());
    Ok(())
}

fn print_report(report: &ExperimentReport) {
    println!("config {}  seed {}", report.config_hash, report.seed);
    println!("{:>5} {:>9} {:>9} {:>10} {:>10}", "round", "sparsity", "test_acc", "median_sx", "excess_l1");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for r in &report.rounds {
        println!(
            "{:>5} {:>8}% {:>9} {:>10} {:>10}",
            r.round,
            r.sparsity_pct,
            opt(r.test_accuracy),
            opt(r.median_sigma_x),
            opt(r.mean_excess_layer1)
        );
    }
    for f in &report.families {
        println!(
            "{:<8} sparsity {:.4}  mean_sx {}  excess_l1 {}",
            f.family,
            f.sparsity,
            opt(f.mean_sigma_x),
            opt(f.mean_excess_layer1)
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    if let Command::Gen { kind } = &cli.command {
        let standalone = match kind {
            Some(GenKind::Edges(a)) => a.out.is_some(),
            Some(GenKind::Nlgp(a)) => a.out.is_some(),
            Some(GenKind::Clone(a)) => a.out.is_some(),
            None => false,
        };
        if standalone || g.config.is_none() {
            let kind = kind
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("gen needs --config or a generator with --out".into()))?;
            return standalone_gen(kind, g.seed.unwrap_or(0));
        }
        return config_gen(load_config(g)?, kind.as_ref());
    }

    let exp = Experiment::open(load_config(g)?)?;
    match &cli.command {
        Command::Gen { .. } => unreachable!("handled above"),
        Command::Train => {
            let s = exp.train()?;
            println!(
                "trained {} iterations: loss {:.4}, test accuracy {:.4}",
                s.iterations, s.final_loss, s.test_accuracy
            );
        }
        Command::Imp => {
            for r in exp.imp()? {
                println!("round {:>2}: sparsity {:.4}, kept {}", r.round, r.sparsity, r.kept);
            }
        }
        Command::Oneshot => {
            let m = exp.oneshot()?;
            println!("one-shot mask: sparsity {:.4}", m.sparsity(0));
        }
        Command::Randprune => {
            let m = exp.randprune()?;
            println!("random mask: sparsity {:.4}", m.sparsity(0));
        }
        Command::Analyze { what } => match what {
            Analysis::Kurtosis => {
                for r in exp.analyze_kurtosis()? {
                    println!("{} round {} layer {}: mean excess {:?}", r.family, r.round, r.layer, r.mean_excess);
                }
            }
            Analysis::Localization => {
                for r in exp.analyze_localization()? {
                    println!(
                        "{} round {}: median sigma_x {:.4} over {} fitted units",
                        r.family, r.round, r.median_sigma_x, r.n_fitted
                    );
                }
            }
            Analysis::Cavity => {
                for r in exp.analyze_cavity()? {
                    println!("eval round {} group {}: mean score {:?}", r.eval_round, r.group, r.mean_score);
                }
            }
            Analysis::IcaMatch => {
                let rows = exp.analyze_ica()?;
                println!("matched {} units to ICA components", rows.len());
            }
        },
        Command::Report => print_report(&exp.report()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_maps_to_exit_4_even_inside_a_round() {
        let div = Error::Divergence { iteration: 7, loss: f64::NAN };
        assert_eq!(exit_code(&div), 4);
        let wrapped = Error::RoundFailed {
            round: 3,
            source: Box::new(div),
        };
        assert_eq!(exit_code(&wrapped), 4);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 2);
        assert_eq!(exit_code(&Error::EmptyNetwork), 1);
    }

    #[test]
    fn overrides_parse_typed_values_and_nested_keys() {
        let mut t: toml::Table = "seed = 1\n[train]\nlearning_rate = 0.1\n".parse().unwrap();
        apply_override(&mut t, "train.learning_rate=0.5").unwrap();
        apply_override(&mut t, "model.hidden=[4, 3]").unwrap();
        apply_override(&mut t, "output_dir=runs/a").unwrap();
        assert_eq!(t["train"]["learning_rate"].as_float(), Some(0.5));
        assert_eq!(t["model"]["hidden"].as_array().unwrap().len(), 2);
        assert_eq!(t["output_dir"].as_str(), Some("runs/a"));
        assert!(apply_override(&mut t, "seed.x=1").is_err());
        assert!(apply_override(&mut t, "novalue").is_err());
    }
}

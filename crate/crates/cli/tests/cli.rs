use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prunelab::data::Dataset;
use prunelab::experiment::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prunelab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn prunelab")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        format!(
            r#"
seed = 3
output_dir = "{}"

[model]
hidden = [8, 6]

[train]
total_iterations = 60
rewind_iteration = 6
batch_size = 16
learning_rate = 0.1

[schedule]
fraction = 0.3
rounds = 3

[data]
kind = "edges"
n_train = 240
n_test = 120
n_p = 5
n_classes = 2
contrast = 1.0
noise_std = 0.2

[analysis]
cavity_rounds = [0]
localization_k = 4
ica_components = 4
"#,
            dir.join("run").display()
        ),
    )
    .unwrap();
    path
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn shipped_configs_parse() {
    for name in ["edges.toml", "edges_clone.toml", "nlgp.toml"] {
        let cfg = ExperimentConfig::load(&workspace_root().join("configs").join(name));
        assert!(cfg.is_ok(), "{name}: {:?}", cfg.err());
    }
}

#[test]
fn full_command_sequence_succeeds_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let steps: &[&[&str]] = &[
        &["gen"],
        &["train"],
        &["imp"],
        &["oneshot"],
        &["randprune"],
        &["analyze", "kurtosis"],
        &["analyze", "localization"],
        &["analyze", "cavity"],
        &["analyze", "ica-match"],
        &["report"],
    ];
    for step in steps {
        let mut args = vec!["--config", c];
        args.extend_from_slice(step);
        let o = run(&args);
        assert!(o.status.success(), "{step:?}: {}", stderr(&o));
    }
    let report = tmp.path().join("run/reports/summary_rounds.csv");
    let first = fs::read(&report).unwrap();
    let o = run(&["--config", c, "report"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("round"));
    assert_eq!(fs::read(&report).unwrap(), first);

    let o = run(&["--config", c, "imp"]);
    assert!(o.status.success());
    let o = run(&["--config", c, "report"]);
    assert!(o.status.success());
    assert_eq!(fs::read(&report).unwrap(), first);

    // The run directory keeps the exact config used.
    let saved = ExperimentConfig::load(&tmp.path().join("run/config.toml")).unwrap();
    assert_eq!(saved, ExperimentConfig::load(&cfg).unwrap());
}

#[test]
fn overrides_are_recorded_and_change_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let out = tmp.path().join("other");
    let o = run(&[
        "--config",
        c,
        "--seed",
        "9",
        "--output-dir",
        out.to_str().unwrap(),
        "--set",
        "train.learning_rate=0.05",
        "--set",
        "data.gaussian_clone=true",
        "gen",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let saved = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(saved.seed, 9);
    assert_eq!(saved.train.learning_rate, 0.05);
    assert!(saved.data.gaussian_clone);
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let c = cfg.to_str().unwrap();

    // Config errors.
    let o = run(&["--config", c, "--set", "schedule.fraction=2.0", "gen"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["--config", "/nonexistent/x.toml", "train"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--config", c, "--set", "nonsense", "train"]);
    assert_eq!(o.status.code(), Some(2));

    // Missing upstream artifact names its producer.
    let o = run(&["--config", c, "analyze", "cavity"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run `prunelab gen --config"), "{}", stderr(&o));

    // Stale artifacts after a pipeline-relevant change.
    assert!(run(&["--config", c, "gen"]).status.success());
    assert!(run(&["--config", c, "imp"]).status.success());
    let o = run(&["--config", c, "--set", "train.total_iterations=61", "analyze", "kurtosis"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("stale"));
}

#[test]
fn standalone_generators_write_containers() {
    let tmp = tempfile::tempdir().unwrap();
    let edges = tmp.path().join("edges.plds");
    let o = run(&[
        "--seed",
        "4",
        "gen",
        "edges",
        "--out",
        edges.to_str().unwrap(),
        "--n-samples",
        "300",
        "--n-p",
        "6",
        "--n-classes",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = Dataset::load(&edges).unwrap();
    assert_eq!((d.len(), d.feature_dim(), d.n_classes()), (300, 36, 3));
    assert!(tmp.path().join("edges.json").exists());

    let clone = tmp.path().join("clone.plds");
    let o = run(&["gen", "clone", "--input", edges.to_str().unwrap(), "--out", clone.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = Dataset::load(&clone).unwrap();
    assert_eq!(c.class_counts(), d.class_counts());

    let nlgp = tmp.path().join("nlgp.plds");
    let o = run(&["gen", "nlgp", "--out", nlgp.to_str().unwrap(), "--n-samples", "50", "--n-p", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(Dataset::load(&nlgp).unwrap().feature_dim(), 64);

    // Same seed, same bytes.
    let again = tmp.path().join("again.plds");
    run(&["--seed", "4", "gen", "edges", "--out", again.to_str().unwrap(), "--n-samples", "300", "--n-p", "6", "--n-classes", "3"]);
    assert_eq!(fs::read(&edges).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn generator_kind_must_match_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let o = run(&["--config", cfg.to_str().unwrap(), "gen", "nlgp"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--config", cfg.to_str().unwrap(), "gen", "clone"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/data/train.json")).unwrap()).unwrap();
    assert_eq!(side["generator"], "edges+gaussian-clone");
}

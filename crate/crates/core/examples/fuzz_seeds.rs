//! Writes small valid inputs for each fuzz target into `fuzz/corpus/`.
//!
//! ```text
//! cargo run -p prunelab --example fuzz_seeds [-- <corpus-dir>]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use prunelab::data::{gen_edges, DType, EdgesSpec};
use prunelab::decomp::{fast_ica, pca};
use prunelab::experiment::ExperimentConfig;
use prunelab::nn::{init_params, Checkpoint, ModelConfig, TrainConfig};
use prunelab::pruning::{random_mask, PruneScope};

fn write(dir: &Path, target: &str, name: &str, bytes: &[u8]) {
    let d = dir.join(target);
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join(name), bytes).unwrap();
}

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus"));

    let train = TrainConfig {
        total_iterations: 10,
        rewind_iteration: 1,
        batch_size: 4,
        learning_rate: 0.1,
        seed: 1,
    };
    for (name, sizes, bn) in [("bn", vec![4, 3, 2], true), ("plain", vec![9, 3, 2], false)] {
        let params = init_params(&ModelConfig::new(sizes, bn, 3)).unwrap();
        write(&dir, "checkpoint_decode", name, &Checkpoint::capture(&params, 1, &train, 0xfeed).encode());
    }

    for (name, shapes, s) in [("one_layer", vec![(3, 5)], 0.4), ("two_layers", vec![(4, 9), (2, 4)], 0.7)] {
        let m = random_mask(&shapes, s, 2, PruneScope::AllLayers).unwrap();
        write(&dir, "mask_decode", name, &m.encode());
    }

    let spec = EdgesSpec {
        n_samples: 6,
        n_p: 3,
        n_classes: 2,
        contrast: 1.0,
        noise_std: 0.1,
    };
    let ds = gen_edges(&spec, 4).unwrap();
    write(&dir, "dataset_decode", "edges_f64", &ds.encode(DType::F64));
    write(&dir, "dataset_decode", "edges_f32", &ds.encode(DType::F32));

    let bigger = gen_edges(&EdgesSpec { n_samples: 60, ..spec }, 5).unwrap();
    write(&dir, "components_decode", "pca", &pca(&bigger, 3).unwrap().encode());
    write(&dir, "components_decode", "ica", &fast_ica(&bigger, 2, 6).unwrap().encode());

    for cfg in ["edges.toml", "edges_clone.toml", "nlgp.toml"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(cfg);
        let text = fs::read_to_string(&path).unwrap();
        ExperimentConfig::from_toml_str(&text).unwrap();
        write(&dir, "config_parse", cfg, text.as_bytes());
    }
    println!("corpus written to {}", dir.display());
}

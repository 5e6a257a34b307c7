//! Experiment configs: parsing and validation return errors, never panic.
//! Accepted configs must round-trip through their own serialization.

#![no_main]

use libfuzzer_sys::fuzz_target;
use prunelab::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).expect("serialized config parses");
        assert_eq!(back, cfg);
        let _ = cfg.pipeline_hash();
    }
});

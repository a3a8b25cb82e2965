#![allow(dead_code)]

use std::path::Path;

use saia_core::gbdt::TrainConfig;
use saia_core::pipeline::{prepare, DataSource, ExperimentConfig, NetworkedConfig, Prepared};
use saia_core::synthetic::SyntheticConfig;

/// Reduced version of the default fixture: 2500 samples, 500 in test.
pub fn small_config(seed: u64) -> ExperimentConfig {
    let defaults = ExperimentConfig::default();
    ExperimentConfig {
        seed,
        data: DataSource::Synthetic(SyntheticConfig { samples: 2500, seed: 1000 + seed, ..SyntheticConfig::default() }),
        embedded: TrainConfig { rounds: 20, ..defaults.embedded.clone() },
        networked: NetworkedConfig { train: TrainConfig { rounds: 25, ..defaults.networked.train.clone() }, weights: None },
        ..defaults
    }
}

pub fn small_fixture(seed: u64) -> (ExperimentConfig, Prepared) {
    let cfg = small_config(seed);
    let prepared = prepare(&cfg, Path::new(".")).unwrap();
    (cfg, prepared)
}

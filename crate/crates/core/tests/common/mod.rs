#![allow(dead_code)]

use pemp::config::RunConfig;
use pemp::data::{generate_synthetic_dataset, Dataset};

/// A configuration small enough to train in well under a second.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    for kv in [
        "num_classes=4",
        "per_class=8",
        "side=32",
        "widths=4,4,4,4",
        "feature_dim=4",
        "prior_epochs=1",
        "seg_epochs=1",
        "episodes_per_epoch=3",
        "eval_runs=2",
        "eval_episodes=4",
    ] {
        c.apply_override(kv).unwrap();
    }
    c
}

pub fn tiny_dataset(config: &RunConfig) -> Dataset {
    generate_synthetic_dataset(config.num_classes, config.per_class, config.side, config.data_seed).unwrap()
}

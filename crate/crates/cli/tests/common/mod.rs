#![allow(dead_code)]

use std::path::{Path, PathBuf};

use subjcheck::config::{ProviderEntry, ProviderKind};
use subjcheck::RunConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The fixture config with outputs and caches redirected under `scratch`.
pub fn fixture_config(scratch: &Path) -> RunConfig {
    let mut config = RunConfig::load(fixtures().join("run.toml")).expect("fixture config");
    config.output_dir = scratch.join("runs");
    config.cache_dir = scratch.join("cache");
    config
}

/// Same, but every provider answers with the offline heuristic.
pub fn heuristic_config(scratch: &Path) -> RunConfig {
    let mut config = fixture_config(scratch);
    for entry in config.providers.values_mut() {
        *entry = ProviderEntry {
            kind: ProviderKind::Heuristic,
            script: None,
            default_reply: None,
            max_in_flight: None,
            config: entry.config.clone(),
        };
    }
    config
}

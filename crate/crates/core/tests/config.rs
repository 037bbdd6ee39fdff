use std::path::Path;

use testrank::harness::ExperimentConfig;

#[test]
fn shipped_default_config_matches_built_in_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let config = ExperimentConfig::load(&path).unwrap();
    assert_eq!(config, ExperimentConfig::default());
    assert_eq!(config.hash(), ExperimentConfig::default().hash());
}

//! Replays the checked-in fuzz seeds through the same checks as the fuzz
//! targets, so the corpus stays meaningful on a stable toolchain.

use std::fs;
use std::path::{Path, PathBuf};

use platoon_core::config::{Config, ConfigError, RawConfig};
use platoon_core::topology::Topology;

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files
}

#[test]
fn topology_seeds_round_trip() {
    let mut accepted = 0;
    for path in seeds("topology_parse") {
        let text = fs::read_to_string(&path).unwrap();
        if let Ok(topo) = Topology::parse(&text) {
            accepted += 1;
            assert_eq!(Topology::parse(&topo.to_text()).unwrap(), topo, "{}", path.display());
        }
    }
    assert!(accepted >= 10);
}

#[test]
fn config_seeds_load_or_fail_cleanly() {
    let mut loaded = 0;
    for path in seeds("config_parse") {
        let text = fs::read_to_string(&path).unwrap();
        let Ok(raw) = RawConfig::parse(&text) else {
            continue;
        };
        if let Ok(cfg) = Config::from_raw(&raw, |_| Err(ConfigError::Invalid("no files".into()))) {
            loaded += 1;
            for sc in &cfg.scenarios {
                sc.sim.validate().unwrap();
                assert_eq!(Topology::parse(&sc.sim.topology.to_text()).unwrap(), sc.sim.topology);
            }
        }
    }
    assert!(loaded >= 4);
}

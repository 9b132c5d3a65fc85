#![no_main]

use libfuzzer_sys::fuzz_target;
use platoon_core::config::{Config, ConfigError, RawConfig};
use platoon_core::topology::Topology;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(raw) = RawConfig::parse(text) else {
        return;
    };
    // topology.file lookups fail, so no disk access happens.
    let result = Config::from_raw(&raw, |_| Err(ConfigError::Invalid("no files while fuzzing".into())));
    if let Ok(cfg) = result {
        assert!(!cfg.scenarios.is_empty());
        for sc in &cfg.scenarios {
            sc.sim.validate().expect("loaded scenarios are valid");
            let text = sc.sim.topology.to_text();
            assert_eq!(Topology::parse(&text).expect("round trip"), sc.sim.topology);
        }
    }
});

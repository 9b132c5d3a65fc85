#![no_main]

use libfuzzer_sys::fuzz_target;
use platoon_core::topology::Topology;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(topo) = Topology::parse(text) {
        // Anything accepted must survive a round trip unchanged.
        let again = Topology::parse(&topo.to_text()).expect("serialized topology parses");
        assert_eq!(again, topo);
    }
});

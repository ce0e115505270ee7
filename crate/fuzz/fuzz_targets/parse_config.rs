#![no_main]

use explet_core::harness::PipelineConfig;
use explet_core::io::config::ConfigMap;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(map) = ConfigMap::parse(text) {
        assert_eq!(ConfigMap::parse(&map.render()).unwrap(), map);
        let _ = PipelineConfig::from_map(&map);
    }
});

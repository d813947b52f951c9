#![no_main]

//! Fuzzes the experiment-config JSON parser: parsing arbitrary bytes must
//! never panic, and any config that parses and validates must survive a
//! serialize/parse round trip unchanged.

use libfuzzer_sys::fuzz_target;
use levy_sysid::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = ExperimentConfig::from_json(text) else {
        return;
    };
    if config.validate().is_ok() {
        // validated configs contain only finite numbers, so the round trip
        // is exact (serde_json float_roundtrip)
        let json = config.to_json();
        let reparsed = ExperimentConfig::from_json(&json).expect("canonical JSON parses");
        assert_eq!(config, reparsed);
        // grid construction must not panic either way
        let _ = config.build_grid();
    }
});

#![no_main]

//! Fuzzes the report JSON readers: Monte Carlo and pipeline reports parsed
//! from arbitrary bytes must never panic and must re-serialize cleanly.

use libfuzzer_sys::fuzz_target;
use levy_sysid::monte_carlo::McReport;
use levy_sysid::pipeline::PipelineReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(report) = serde_json::from_str::<McReport>(text) {
        let _ = serde_json::to_string(&report);
    }
    if let Ok(report) = serde_json::from_str::<PipelineReport>(text) {
        let _ = serde_json::to_string(&report);
    }
});

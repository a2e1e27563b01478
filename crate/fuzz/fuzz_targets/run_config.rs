//! Run-configuration JSON round-trips: any accepted config re-serializes
//! and re-parses to the same document.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mhmmx_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = serde_json::from_str::<RunConfig>(text) {
            let json = cfg.to_json().expect("accepted config serializes");
            let back: RunConfig = serde_json::from_str(&json).expect("round-trip parses");
            assert_eq!(json, back.to_json().unwrap());
        }
    }
});

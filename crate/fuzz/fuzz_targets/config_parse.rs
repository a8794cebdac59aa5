#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = greenpeel_cli::config::RunConfig::from_json(text) {
            // accepted configs serialize and re-parse to the same value
            let json = cfg.to_json();
            let again = greenpeel_cli::config::RunConfig::from_json(&json).unwrap();
            assert_eq!(cfg, again);
        }
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = greenpeel_cli::dataset::dataset_from_bytes(data) {
        // anything accepted must re-serialize to the exact input bytes
        let back = greenpeel_cli::dataset::dataset_to_bytes(&set);
        assert_eq!(back, data);
    }
});

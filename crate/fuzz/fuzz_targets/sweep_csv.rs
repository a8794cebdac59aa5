#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = greenpeel_cli::report::read_sweep_csv(text) {
            // parsed rows must survive a write/read cycle and keep plotting
            // code panic-free
            let again = greenpeel_cli::report::read_sweep_csv(
                &greenpeel_cli::report::write_sweep_csv(&rows),
            )
            .unwrap();
            assert_eq!(rows.len(), again.len());
            let _ = greenpeel_cli::report::render_sweep_svg(&rows);
        }
    }
});

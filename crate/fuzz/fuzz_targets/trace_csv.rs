#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = eleatt::analysis::parse_trace_csv(text) {
            assert!(rows.iter().all(|r| r.value.is_finite()));
        }
    }
});

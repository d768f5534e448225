#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((rows, cols, images)) = eleatt::data::parse_idx_images(data) {
        assert!(images.iter().all(|img| img.len() == rows * cols));
    }
});

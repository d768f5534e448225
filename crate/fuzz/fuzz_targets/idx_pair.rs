#![no_main]

use libfuzzer_sys::fuzz_target;

// A little-endian u32 prefix gives the length of the image buffer; the rest is labels.
fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let (head, rest) = data.split_at(4);
    let cut = (u32::from_le_bytes(head.try_into().unwrap()) as usize).min(rest.len());
    let (images, labels) = rest.split_at(cut);
    if let Ok(set) = eleatt::data::decode_idx(images, labels) {
        assert_eq!(set.pixels.len(), set.labels.len());
        assert!(set.pixels.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }
});

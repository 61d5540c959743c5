#![no_main]

use libfuzzer_sys::fuzz_target;
use spr_core::dataio::parse_idx_images;

fuzz_target!(|data: &[u8]| {
    if let Ok(arr) = parse_idx_images(data) {
        assert_eq!(arr.data.len(), arr.dims.iter().map(|&d| d as usize).product::<usize>());
    }
});

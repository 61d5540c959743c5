#![no_main]

use libfuzzer_sys::fuzz_target;
use spr_core::dataio::{decode_sprd, encode_sprd};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = decode_sprd(data) {
        let again = decode_sprd(&encode_sprd(&ds)).expect("re-encoded dataset decodes");
        assert_eq!(again.labels, ds.labels);
    }
});

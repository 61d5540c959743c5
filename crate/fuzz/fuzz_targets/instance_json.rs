#![no_main]

use libfuzzer_sys::fuzz_target;
use spr_core::relax::MipInstance;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = MipInstance::from_json(text);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use spr_core::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes().expect("valid checkpoint serializes");
        Checkpoint::from_bytes(&bytes).expect("serialized checkpoint reloads");
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use spr_core::dataio::{dataset_from_idx, Split};

// first byte picks where the image file ends and the label file begins
fuzz_target!(|data: &[u8]| {
    let Some((&cut, rest)) = data.split_first() else { return };
    let at = (cut as usize * rest.len()) / 255;
    let (images, labels) = rest.split_at(at);
    if let Ok(ds) = dataset_from_idx(images, labels, Split::Train) {
        assert_eq!(ds.len(), ds.labels.len());
    }
});

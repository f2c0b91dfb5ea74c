#![no_main]

use cipca_core::similarity::{to_distance, SimilarityMatrix};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = SimilarityMatrix::from_json(data) {
        let _ = to_distance(&s);
    }
});

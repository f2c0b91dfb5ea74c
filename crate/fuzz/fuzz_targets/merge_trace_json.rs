#![no_main]

use cipca_core::clustering::{select_k, MergeTrace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = MergeTrace::from_json(data) {
        let _ = select_k(&t, 1e3, 1.3);
    }
});

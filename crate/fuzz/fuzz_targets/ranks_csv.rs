#![no_main]

use cipca_core::panel::{read_ranks_csv, WeightScheme};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_ranks_csv(data, WeightScheme::Value);
});

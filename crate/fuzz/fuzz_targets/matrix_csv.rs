#![no_main]

use cipca_core::similarity::read_matrix_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((names, m)) = read_matrix_csv(data) {
        assert_eq!(m.nrows(), names.len());
    }
});

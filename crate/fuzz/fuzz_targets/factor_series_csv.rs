#![no_main]

use cipca_core::series::FactorSeries;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = FactorSeries::read_csv(data) {
        let mut out = Vec::new();
        s.write_csv(&mut out).expect("a loaded series writes back");
    }
});

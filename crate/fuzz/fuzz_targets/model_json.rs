#![no_main]

use cipca_core::factor_model::FittedModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = FittedModel::from_json(data) {
        let mut out = Vec::new();
        m.to_json(&mut out).expect("a loaded model writes back");
    }
});

#![no_main]

use cipca_core::panel::EstimationPanel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(panel) = EstimationPanel::read_csv(data) {
        let mut out = Vec::new();
        panel.write_csv(&mut out).expect("a loaded panel writes back");
    }
});

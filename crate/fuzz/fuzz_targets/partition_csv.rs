#![no_main]

use cipca_core::clustering::Partition;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let names: Vec<String> = (1..=9).map(|i| format!("c{i:02}")).collect();
    if let Ok(p) = Partition::read_csv(data, &names) {
        assert_eq!(p.len(), names.len());
        assert!(p.clusters().iter().all(|c| !c.is_empty()));
    }
});

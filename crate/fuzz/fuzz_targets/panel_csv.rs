#![no_main]

use cipca_core::panel::{read_panel, write_panel, ColumnSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(panel) = read_panel(data, &ColumnSchema::default()) else { return };
    let mut out = Vec::new();
    write_panel(&mut out, &panel).expect("a loaded panel writes back");
});

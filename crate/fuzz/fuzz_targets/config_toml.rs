#![no_main]

use cipca_cli::config::{apply_override, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = RunConfig::parse(text);
    // the first line doubles as a command-line override
    if let Some(line) = text.lines().next() {
        let mut table = toml::Table::new();
        let _ = apply_override(&mut table, line);
    }
});

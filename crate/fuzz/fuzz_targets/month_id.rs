#![no_main]

use cipca_core::panel::parse_month;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Some(m) = std::str::from_utf8(data).ok().and_then(parse_month) {
        assert!((1..=12).contains(&(m % 100)));
    }
});

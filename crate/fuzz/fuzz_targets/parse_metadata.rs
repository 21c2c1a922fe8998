#![no_main]

use libfuzzer_sys::fuzz_target;
use lrcp_core::projection::io::{format_metadata, parse_metadata};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = parse_metadata(text) {
        assert_eq!(parse_metadata(&format_metadata(&meta)).expect("formatted metadata parses"), meta);
    }
});

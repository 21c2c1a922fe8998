#![no_main]

use libfuzzer_sys::fuzz_target;
use lrcp_core::io::{decode_atlas, encode_atlas};

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = decode_atlas(data) {
        assert_eq!(decode_atlas(&encode_atlas(&a)).expect("re-encoded atlas decodes"), a);
    }
});

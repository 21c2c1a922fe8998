#![no_main]

use libfuzzer_sys::fuzz_target;
use lrcp_core::autoencoder::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_model(data) {
        let bytes = encode_model(&m);
        let again = decode_model(&bytes).expect("re-encoded model decodes");
        assert_eq!(encode_model(&again), bytes);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use lrcp_core::projection::io::{format_embedding, parse_embedding};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(e) = parse_embedding(text) {
        let again = parse_embedding(&format_embedding(&e)).expect("formatted embedding parses");
        assert_eq!(again.subject_ids, e.subject_ids);
        assert_eq!((again.method, again.layer), (e.method, e.layer));
        let bits = |m: &lrcp_core::projection::EmbeddingMatrix| m.values.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&again), bits(&e));
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use lrcp_core::io::{decode_volume, encode_volume};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = decode_volume(data) {
        let again = decode_volume(&encode_volume(&v)).expect("re-encoded volume decodes");
        assert_eq!(again.dims(), v.dims());
        assert!(again.voxels().iter().zip(v.voxels()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
});

#![no_main]

use explet_core::io::{decode_umm, encode_umm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_umm(data) {
        // stored as f64, so a decoded model re-encodes to the same bytes
        assert_eq!(encode_umm(&m), data);
    }
});

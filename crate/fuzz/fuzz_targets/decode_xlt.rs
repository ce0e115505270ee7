#![no_main]

use explet_core::io::{decode_xlt, encode_xlt};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = decode_xlt(data) {
        assert_eq!(decode_xlt(&encode_xlt(&a)).unwrap(), a);
    }
});

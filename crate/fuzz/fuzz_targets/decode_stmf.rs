#![no_main]

use explet_core::io::decode_stmf;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((d, rows)) = decode_stmf(data) {
        assert!(rows.iter().all(|r| r.len() == d));
    }
});

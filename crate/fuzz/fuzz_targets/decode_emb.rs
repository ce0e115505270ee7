#![no_main]

use explet_core::io::decode_emb;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_emb(data);
});

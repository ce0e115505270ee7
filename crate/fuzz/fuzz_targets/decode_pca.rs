#![no_main]

use explet_core::io::decode_pca;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_pca(data);
});

#![no_main]

use explet_core::io::decode_svm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_svm(data) {
        let _ = m.predict(&vec![0.5; m.dim()]);
    }
});

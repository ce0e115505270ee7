#![no_main]

use explet_core::io::dataset::decode_frame;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_frame(data) {
        assert!(f.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }
});

#![no_main]

use std::path::Path;

use explet_core::io::dataset::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_manifest(data, Path::new("data"));
});

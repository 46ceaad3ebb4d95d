#![no_main]

use libfuzzer_sys::fuzz_target;
use oce_net::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    // the layout is canonical: anything that decodes re-encodes to the same bytes
    if let Ok(tensors) = decode(data) {
        assert_eq!(encode(&tensors), data);
    }
});

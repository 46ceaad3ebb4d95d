#![no_main]

use libfuzzer_sys::fuzz_target;
use oce_net::config::PreprocessConfig;
use oce_net::preprocess::{binarize, decode_png, preprocess};

fuzz_target!(|data: &[u8]| {
    let Ok(px) = decode_png(data) else { return };
    // keep each run short
    if px.width * px.height > 1 << 20 {
        return;
    }
    let out = preprocess(&px, &PreprocessConfig::default());
    assert_eq!(out.data.len(), px.width * px.height);
    assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(binarize(&px).len(), px.width * px.height);
});

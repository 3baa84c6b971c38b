#![no_main]

use agentreg::pnm::decode;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode(data) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});

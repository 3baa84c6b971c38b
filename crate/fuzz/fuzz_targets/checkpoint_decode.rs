#![no_main]

use agentreg::checkpoint::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode(data) {
        let bytes = encode(&ck).expect("decoded checkpoint re-encodes");
        assert_eq!(decode(&bytes).expect("round trip"), ck);
    }
});

#![no_main]

use agentreg::dataset::{format_xyz, parse_xyz};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(points) = parse_xyz(text) {
            assert_eq!(parse_xyz(&format_xyz(&points)).expect("formatted points parse"), points);
        }
    }
});

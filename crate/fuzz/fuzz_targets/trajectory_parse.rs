#![no_main]

use agentreg::pose::{format_trajectory, parse_trajectory};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(poses) = parse_trajectory(text) {
            let back = parse_trajectory(&format_trajectory(&poses)).expect("formatted trajectory parses");
            assert_eq!(back.len(), poses.len());
        }
    }
});

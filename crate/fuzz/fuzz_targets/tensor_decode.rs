#![no_main]

use agentreg::numerics::io::{decode, encode_complex, encode_tensor, StoredTensor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode(data) {
        let again = match &t {
            StoredTensor::Real(r) => encode_tensor(r),
            StoredTensor::Complex(c) => encode_complex(c),
        };
        assert_eq!(again, data);
    }
});

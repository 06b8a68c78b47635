#![no_main]

use libfuzzer_sys::fuzz_target;
use liverformer::deform::{decode_field, encode_field};

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_field(data) {
        assert_eq!(encode_field(&f).len(), data.len());
    }
});

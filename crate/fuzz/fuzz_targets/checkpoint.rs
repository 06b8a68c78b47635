#![no_main]

use libfuzzer_sys::fuzz_target;
use liverformer::autodiff::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_checkpoint(data) {
        let (bytes, _) = encode_checkpoint(&params);
        assert_eq!(bytes.as_slice(), data);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use liverformer::volume_io::{read_nifti_pair, HEADER_SIZE};

fuzz_target!(|data: &[u8]| {
    let cut = data.len().min(HEADER_SIZE);
    let _ = read_nifti_pair(&data[..cut], &data[cut..]);
});

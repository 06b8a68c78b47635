#![no_main]

use libfuzzer_sys::fuzz_target;
use liverformer::volume_io::{peek_datatype, read_nifti, read_nifti_labels, write_nifti};

fuzz_target!(|data: &[u8]| {
    let _ = peek_datatype(data);
    let _ = read_nifti_labels(data);
    if let Ok(v) = read_nifti(data) {
        let _ = write_nifti(&v);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use liverformer::volume_io::NiftiHeader;

fuzz_target!(|data: &[u8]| {
    if let Ok(h) = NiftiHeader::parse(data) {
        let _ = h.dims();
        let _ = h.spacing();
        let _ = h.datatype();
    }
});

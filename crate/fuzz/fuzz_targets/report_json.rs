#![no_main]

use libfuzzer_sys::fuzz_target;
use liverformer::metrics::DatasetReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = DatasetReport::from_json(text) {
            let _ = r.to_csv();
            let _ = r.to_text_table();
        }
    }
});

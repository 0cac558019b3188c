#![no_main]

use libfuzzer_sys::fuzz_target;
use spkf_nui::filters::{read_trace_csv, write_trace_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = read_trace_csv(text) {
        let back = read_trace_csv(&write_trace_csv(&rows).unwrap()).unwrap();
        assert_eq!(back, rows);
    }
});

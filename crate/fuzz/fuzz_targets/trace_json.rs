#![no_main]

use libfuzzer_sys::fuzz_target;
use spkf_nui::filters::{read_trace_json, write_trace_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = read_trace_json(text) {
        let back = read_trace_json(&write_trace_json(&rows).unwrap()).unwrap();
        assert_eq!(back, rows);
    }
});

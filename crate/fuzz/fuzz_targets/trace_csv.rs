#![no_main]

use libfuzzer_sys::fuzz_target;
use tbc_core::scenario::{read_trace, write_csv_to, TRACE_COLUMNS};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_trace(data) {
        let mut out = Vec::new();
        write_csv_to(&mut out, &rows, &TRACE_COLUMNS).unwrap();
        let again = read_trace(out.as_slice()).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});

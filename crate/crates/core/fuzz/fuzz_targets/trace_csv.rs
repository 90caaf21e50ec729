#![no_main]

use leo_edge::traces::{read_trace_from, write_trace_to};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = read_trace_from(data, "fuzz") {
        let mut buf = Vec::new();
        write_trace_to(&trace, &mut buf).unwrap();
        let again = read_trace_from(buf.as_slice(), "fuzz").unwrap();
        assert_eq!(trace, again);
    }
});

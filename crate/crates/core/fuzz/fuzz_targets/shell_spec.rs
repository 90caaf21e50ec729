#![no_main]

use leo_edge::config::{parse_shell, Format};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    for format in [Format::Json, Format::Toml] {
        if let Ok(spec) = parse_shell(data, format) {
            spec.validate().unwrap();
            assert!(spec.satellite_count() > 0);
        }
    }
});

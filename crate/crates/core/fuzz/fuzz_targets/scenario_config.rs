#![no_main]

use leo_edge::config::{Format, ScenarioFile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    for format in [Format::Json, Format::Toml] {
        if let Ok(file) = ScenarioFile::parse(data, format) {
            let _ = file.link.validate();
        }
    }
});

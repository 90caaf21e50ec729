#![no_main]

use leo_edge::config::{read_sites_from, write_sites_to};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sites) = read_sites_from(data, "fuzz") {
        let mut buf = Vec::new();
        write_sites_to(&sites, &mut buf).unwrap();
        assert_eq!(read_sites_from(buf.as_slice(), "fuzz").unwrap(), sites);
    }
});

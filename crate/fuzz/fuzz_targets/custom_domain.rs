#![no_main]

use libfuzzer_sys::fuzz_target;
use ringfem::config::parse_custom_domain;
use ringfem::geometry::build_mesh;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(ring) = parse_custom_domain(s) {
        let _ = build_mesh(&ring, 1, ring.default_cap());
    }
});

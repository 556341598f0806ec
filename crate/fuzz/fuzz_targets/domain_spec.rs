#![no_main]

use libfuzzer_sys::fuzz_target;
use ringfem::config::DomainSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(d) = s.parse::<DomainSpec>() {
        let back: DomainSpec = d.to_string().parse().expect("printed spec parses");
        assert_eq!(back, d);
    }
});

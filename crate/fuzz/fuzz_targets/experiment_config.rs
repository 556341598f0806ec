#![no_main]

use libfuzzer_sys::fuzz_target;
use ringfem::config::{DomainSpec, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(s) {
        // Custom domains would read arbitrary paths.
        if !matches!(cfg.domain, DomainSpec::Custom(_)) {
            let _ = cfg.validate(None);
        }
    }
});

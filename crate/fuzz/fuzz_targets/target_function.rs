#![no_main]

use libfuzzer_sys::fuzz_target;
use ringfem::approx::TargetFunction;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(t) = TargetFunction::parse(s) {
        let _ = t.jet(0.25, 0.5);
        let _ = t.poly_degree();
        TargetFunction::parse(&t.to_string()).expect("printed target parses");
    }
});

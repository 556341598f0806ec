#![no_main]

use libfuzzer_sys::fuzz_target;
use ringfem::expr::Expr;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(e) = Expr::parse(s) {
        let printed = e.to_string();
        let again = Expr::parse(&printed).expect("printed expression parses");
        assert_eq!(again.to_string(), printed);
        let _ = e.eval(0.3, -0.7);
        let _ = e.to_poly();
    }
});

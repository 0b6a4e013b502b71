#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(case) = powerdiv::parse_matpower(data) {
        let _ = powerdiv::build_admittance(&case);
    }
});

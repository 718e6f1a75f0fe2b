#![no_main]

use bemtrace_core::bimlite::{parse_bimlite, write_bimlite};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(snapshot) = parse_bimlite(data) {
        let again = parse_bimlite(&write_bimlite(&snapshot)).expect("written bimlite parses");
        assert_eq!(again.parts(), snapshot.parts());
    }
});

#![no_main]

use bemtrace_core::network::{export_bem, import_bem};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(network) = import_bem(data) {
        let bytes = export_bem(&network);
        assert_eq!(export_bem(&import_bem(&bytes).expect("exported bem parses")), bytes);
    }
});

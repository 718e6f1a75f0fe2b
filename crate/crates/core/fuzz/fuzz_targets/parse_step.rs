#![no_main]

use bemtrace_core::step::parse_step;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_step(data);
});

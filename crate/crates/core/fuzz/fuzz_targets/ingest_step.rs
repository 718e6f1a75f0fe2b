#![no_main]

use bemtrace_core::geom::Tolerances;
use bemtrace_core::ingest::ingest_step;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = ingest_step(data, &Tolerances::default());
});

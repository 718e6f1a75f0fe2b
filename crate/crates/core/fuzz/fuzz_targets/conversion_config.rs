#![no_main]

use bemtrace_core::pipeline::ConversionConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = ConversionConfig::from_json(data);
});

#![no_main]

libfuzzer_sys::fuzz_target!(|data: &[u8]| cast_core_fuzz::config(data));

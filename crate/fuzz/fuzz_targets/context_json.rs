#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| asafeplace_fuzz::context_json(data));

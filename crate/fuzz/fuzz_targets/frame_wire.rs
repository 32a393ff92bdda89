#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| asafeplace_fuzz::frame_wire(data));

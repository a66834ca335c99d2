#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((r0, c0, r1, c1)) = levelset::io::parse_box(text) {
            assert!(r0 <= r1 && c0 <= c1);
        }
    }
});

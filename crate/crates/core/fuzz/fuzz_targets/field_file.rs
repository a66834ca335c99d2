#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = levelset::io::decode_field_file(data) {
        assert_eq!(levelset::io::encode_field_file(&f), data);
    }
});

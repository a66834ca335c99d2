#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = levelset::io::decode_grayscale(data) {
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let _ = levelset::io::decode_mask(data);
});

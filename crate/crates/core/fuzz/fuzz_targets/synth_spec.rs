#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = levelset::io::parse_synth_spec(text) {
            let again = levelset::io::parse_synth_spec(&levelset::io::synth_spec_to_text(&spec)).unwrap();
            assert_eq!(again, spec);
        }
    }
});

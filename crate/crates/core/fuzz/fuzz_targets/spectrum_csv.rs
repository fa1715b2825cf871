#![no_main]

use drumshape::fem::Spectrum;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = Spectrum::parse_csv(text) {
            let back = Spectrum::parse_csv(&s.to_csv()).unwrap();
            assert_eq!(back, s);
        }
    }
});

#![no_main]

use drumshape::geometry::Polygon;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = Polygon::parse_text(text) {
            let back = Polygon::parse_text(&p.to_text()).unwrap();
            assert_eq!(back.vertices(), p.vertices());
        }
    }
});

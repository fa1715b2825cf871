#![no_main]

use drumshape::geometry::RasterImage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = RasterImage::from_pgm(data) {
        let _ = RasterImage::from_pgm(&img.to_pgm()).unwrap();
    }
});

//! Replays the checked-in fuzz corpus through the same round-trip checks
//! the fuzz targets perform, plus a few mutations of each seed.

use std::fs;
use std::path::Path;

use drumshape::config::KvConfig;
use drumshape::dataset::{decode_dataset, encode_dataset, DatasetConfig};
use drumshape::fem::Spectrum;
use drumshape::geometry::{Polygon, RasterImage};
use drumshape::model::{decode_checkpoint, encode_checkpoint, ModelConfig};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.iter().map(|f| fs::read(f).unwrap()).collect()
}

/// Each seed, every truncation and a sweep of single-byte flips.
fn variants(target: &str) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for s in seeds(target) {
        for n in 0..s.len() {
            out.push(s[..n].to_vec());
        }
        for i in (0..s.len()).step_by(3) {
            let mut m = s.clone();
            m[i] ^= 0x5a;
            out.push(m);
        }
        out.push(s);
    }
    out
}

#[test]
fn dataset_seeds() {
    let mut ok = 0;
    for d in variants("decode_dataset") {
        if let Ok(ds) = decode_dataset(&d) {
            let again = encode_dataset(&ds.header.config, ds.header.n_eigs, &ds.records);
            assert_eq!(decode_dataset(&again).unwrap(), ds);
            ok += 1;
        }
    }
    assert!(ok >= 2);
}

#[test]
fn checkpoint_seeds() {
    let mut ok = 0;
    for d in variants("decode_checkpoint") {
        if let Ok((model, _)) = decode_checkpoint(&d) {
            let again = encode_checkpoint(&model, &KvConfig::new());
            let (back, _) = decode_checkpoint(&again).unwrap();
            assert_eq!(back.params(), model.params());
            ok += 1;
        }
    }
    assert!(ok >= 1);
}

#[test]
fn polygon_seeds() {
    for d in variants("polygon_text") {
        if let Ok(text) = std::str::from_utf8(&d) {
            if let Ok(p) = Polygon::parse_text(text) {
                let back = Polygon::parse_text(&p.to_text()).unwrap();
                assert_eq!(back.vertices(), p.vertices());
            }
        }
    }
}

#[test]
fn kv_seeds() {
    for d in variants("kv_config") {
        if let Ok(text) = std::str::from_utf8(&d) {
            if let Ok(kv) = KvConfig::parse(text) {
                let _ = DatasetConfig::from_kv(&kv);
                let _ = ModelConfig::from_kv(&kv);
            }
        }
    }
}

#[test]
fn spectrum_seeds() {
    for d in variants("spectrum_csv") {
        if let Ok(text) = std::str::from_utf8(&d) {
            if let Ok(s) = Spectrum::parse_csv(text) {
                assert_eq!(Spectrum::parse_csv(&s.to_csv()).unwrap(), s);
            }
        }
    }
}

#[test]
fn pgm_seeds() {
    for d in variants("pgm") {
        if let Ok(img) = RasterImage::from_pgm(&d) {
            RasterImage::from_pgm(&img.to_pgm()).unwrap();
        }
    }
}

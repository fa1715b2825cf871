#![no_main]

use drumshape::dataset::{decode_dataset, encode_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = decode_dataset(data) {
        let again = encode_dataset(&ds.header.config, ds.header.n_eigs, &ds.records);
        assert_eq!(decode_dataset(&again).unwrap(), ds);
    }
});

#![no_main]

use drumshape::config::KvConfig;
use drumshape::model::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((model, kv)) = decode_checkpoint(data) {
        let again = encode_checkpoint(&model, &KvConfig::new());
        let (back, _) = decode_checkpoint(&again).unwrap();
        assert_eq!(back.params(), model.params());
        let _ = kv;
    }
});

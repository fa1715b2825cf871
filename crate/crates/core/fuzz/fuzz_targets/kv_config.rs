#![no_main]

use drumshape::config::KvConfig;
use drumshape::dataset::DatasetConfig;
use drumshape::model::ModelConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(kv) = KvConfig::parse(text) {
            let _ = DatasetConfig::from_kv(&kv);
            let _ = ModelConfig::from_kv(&kv);
        }
    }
});

//! Binary checkpoint: magic, version, configuration text, flat parameters.
//!
//! Layout (little-endian): `SDNN`, u32 version, u32 text length, UTF-8
//! `key = value` text, u64 parameter count, f64 parameters.

use super::{Model, ModelConfig, ModelError, Result};
use crate::config::KvConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on the configuration text, to reject absurd headers early.
const MAX_TEXT: usize = 1 << 20;

/// Serialises the model. Extra keys (training settings, provenance) are
/// appended to the configuration text.
pub fn encode_checkpoint(model: &Model, extra: &KvConfig) -> Vec<u8> {
    let mut kv = model.config().to_kv();
    for k in extra.keys() {
        if kv.get(k).is_none() {
            kv.set(k, extra.get(k).unwrap_or_default());
        }
    }
    let text = kv.to_string();
    let mut out = Vec::with_capacity(20 + text.len() + 8 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
    match end {
        Some(e) => {
            let s = &bytes[*pos..e];
            *pos = e;
            Ok(s)
        }
        None => Err(ModelError::Truncated(*pos)),
    }
}

/// Parses a checkpoint, returning the model and the full configuration text.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, KvConfig)> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let len = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
    if len > MAX_TEXT {
        return Err(ModelError::InvalidCheckpoint(format!(
            "config text of {len} bytes"
        )));
    }
    let text = std::str::from_utf8(take(bytes, &mut pos, len)?)
        .map_err(|e| ModelError::InvalidCheckpoint(format!("config text: {e}")))?;
    let kv = KvConfig::parse(text)?;
    let cfg = ModelConfig::from_kv(&kv)?;
    let count = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap());
    let expected = cfg.layout().total;
    if count != expected as u64 {
        return Err(ModelError::ParamCount {
            expected,
            got: count.min(usize::MAX as u64) as usize,
        });
    }
    let block = take(bytes, &mut pos, 8 * expected)?;
    if pos != bytes.len() {
        return Err(ModelError::InvalidCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    let params: Vec<f64> = block
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::InvalidCheckpoint(format!(
            "parameter {i} is not finite"
        )));
    }
    Ok((Model::from_params(cfg, params)?, kv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = ModelConfig::toy();
        cfg.init_seed = 3;
        let m = Model::new(cfg).unwrap();
        let mut extra = KvConfig::new();
        extra.set("lr", "0.001");
        let bytes = encode_checkpoint(&m, &extra);
        let (back, kv) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(kv.get("lr"), Some("0.001"));
        assert_eq!(encode_checkpoint(&back, &extra), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::new(ModelConfig::toy_dense()).unwrap();
        let bytes = encode_checkpoint(&m, &KvConfig::new());
        assert!(matches!(
            decode_checkpoint(&bytes[..3]),
            Err(ModelError::Truncated(0))
        ));
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(decode_checkpoint(&b), Err(ModelError::BadMagic)));
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(
            decode_checkpoint(&b),
            Err(ModelError::UnsupportedVersion(9))
        ));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1]),
            Err(ModelError::Truncated(_))
        ));
        let mut b = bytes.clone();
        b.push(0);
        assert!(matches!(
            decode_checkpoint(&b),
            Err(ModelError::InvalidCheckpoint(_))
        ));
        let mut b = bytes.clone();
        let n = b.len();
        b[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&b),
            Err(ModelError::InvalidCheckpoint(_))
        ));
        let mut b = bytes;
        b[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_checkpoint(&b).is_err());
    }
}

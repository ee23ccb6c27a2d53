//! Model file format.
//!
//! ```text
//! LIFTLSTM 1\n
//! {json document: descriptor + row-major weights}\n
//! CRC32 xxxxxxxx\n
//! ```
//!
//! The checksum covers every byte before the `CRC32` line. Floats are written
//! in shortest round-trip form, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lstm::ModelParams;

pub const MODEL_MAGIC: &str = "LIFTLSTM";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const CRC_PREFIX: &str = "CRC32 ";

pub fn encode_model(m: &ModelParams) -> Result<Vec<u8>> {
    m.validate()?;
    let mut out = format!("{MODEL_MAGIC} {MODEL_FORMAT_VERSION}\n");
    out.push_str(&serde_json::to_string(m)?);
    out.push('\n');
    let crc = crc32fast::hash(out.as_bytes());
    out.push_str(&format!("{CRC_PREFIX}{crc:08x}\n"));
    Ok(out.into_bytes())
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("not UTF-8".into()))?;
    let (header, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let version = header
        .strip_prefix(MODEL_MAGIC)
        .and_then(|v| v.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("bad magic, expected {MODEL_MAGIC}")))?;
    let version: u32 = version
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("unreadable version {version:?}")))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }

    let body = rest.strip_suffix('\n').unwrap_or(rest);
    let (json, crc_line) = body
        .rsplit_once('\n')
        .ok_or_else(|| Error::Format("missing checksum line".into()))?;
    let stored = crc_line
        .strip_prefix(CRC_PREFIX)
        .and_then(|h| u32::from_str_radix(h.trim(), 16).ok())
        .ok_or_else(|| Error::Format("malformed checksum line".into()))?;
    let covered = header.len() + 1 + json.len() + 1;
    let computed = crc32fast::hash(&bytes[..covered]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let model: ModelParams = serde_json::from_str(json).map_err(|e| Error::Shape(format!("model document: {e}")))?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(m: &ModelParams, path: &Path) -> Result<()> {
    let bytes = encode_model(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{init_model, ArchitectureConfig};
    use crate::pose::FeatureConfig;

    fn small() -> ModelParams {
        let cfg = ArchitectureConfig {
            input_width: 6,
            lstm_hidden: vec![3, 4],
            dense_widths: vec![5, 2],
            features: FeatureConfig::default(),
        };
        init_model(&cfg, 77).unwrap()
    }

    fn with_crc(header_and_json: &str) -> Vec<u8> {
        let crc = crc32fast::hash(header_and_json.as_bytes());
        format!("{header_and_json}CRC32 {crc:08x}\n").into_bytes()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let bytes = encode_model(&m).unwrap();
        assert!(bytes.starts_with(b"LIFTLSTM 1\n"));
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        let a: Vec<u64> = m.param_slices().concat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.param_slices().concat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.descriptor.seed, 77);
    }

    #[test]
    fn file_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.liftlstm");
        save_model(&small(), &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), small());
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_model(&small()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_model(&small()).unwrap();
        let pos = bytes.iter().position(|&b| b == b'0').unwrap();
        bytes[pos] = b'1';
        assert!(matches!(decode_model(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn version_mismatch() {
        let json = serde_json::to_string(&small()).unwrap();
        let bytes = with_crc(&format!("LIFTLSTM 2\n{json}\n"));
        assert!(matches!(decode_model(&bytes), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn three_way_head_rejected() {
        let mut m = small();
        let head = m.dense_layers.last_mut().unwrap();
        head.w = crate::linalg::Matrix::zeros(3, 5);
        head.b = vec![0.0; 3];
        m.descriptor.dense_widths = vec![5, 3];
        let json = serde_json::to_string(&m).unwrap();
        let bytes = with_crc(&format!("LIFTLSTM 1\n{json}\n"));
        assert!(matches!(decode_model(&bytes), Err(Error::Shape(_))));
    }

    #[test]
    fn matrix_length_checked() {
        let json = serde_json::to_string(&small()).unwrap();
        let json = json.replacen("\"rows\":3", "\"rows\":2", 1);
        let bytes = with_crc(&format!("LIFTLSTM 1\n{json}\n"));
        assert!(matches!(decode_model(&bytes), Err(Error::Shape(_))));
    }
}

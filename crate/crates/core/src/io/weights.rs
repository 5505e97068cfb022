//! SLNet weights file.
//!
//! Layout (all little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `SLNW` |
//! | u32 | format version (1) |
//! | u32 x 4 | k, c, kernel height, kernel width |
//! | u32 | epochs trained |
//! | u64 | hyperparameter hash |
//! | f64 | input scale |
//! | f64 x ... | layer 1 weights `[c][k][kh][kw]`, layer 1 bias `[c]`, layer 2 weights `[k][c][kh][kw]`, layer 2 bias `[k]` |
//! | u32 | CRC-32 of every byte after the version field |

use std::path::Path;

use crate::error::{Error, Result};
use crate::slnet::{ConvLayer, Provenance, SLNetModel};

use super::{atomic_write, read_file};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SLNW";
pub const WEIGHTS_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 16 + 4 + 8 + 8;

pub fn encode_model(model: &SLNetModel) -> Vec<u8> {
    let (kh, kw) = model.kernel();
    let mut b = Vec::with_capacity(HEADER_LEN + 8 * model.parameter_count() + 4);
    b.extend_from_slice(WEIGHTS_MAGIC);
    b.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for d in [model.frames(), model.hidden_channels(), kh, kw] {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    b.extend_from_slice(&model.provenance.epochs.to_le_bytes());
    b.extend_from_slice(&model.provenance.hyperparams_hash.to_le_bytes());
    b.extend_from_slice(&model.provenance.input_scale.to_le_bytes());
    for layer in [model.layer1(), model.layer2()] {
        for v in layer.weights().iter().chain(layer.bias()) {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&b[8..]);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedWeights(msg.into())
}

/// Validates magic, version, length and checksum before building anything.
pub fn decode_model(bytes: &[u8]) -> Result<SLNetModel> {
    if bytes.len() < 8 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(malformed("missing SLNW magic"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != WEIGHTS_VERSION {
        return Err(Error::WeightsVersion {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(malformed(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    let (k, c, kh, kw) = (
        u32_at(8) as u64,
        u32_at(12) as u64,
        u32_at(16) as u64,
        u32_at(20) as u64,
    );
    let per_layer = k * c * kh * kw;
    let params = 2 * per_layer + c + k;
    let expected = HEADER_LEN as u64 + 8 * params + 4;
    if expected != bytes.len() as u64 {
        return Err(malformed(format!(
            "dims k={} c={} kernel {}x{} imply {} bytes, file has {}",
            k,
            c,
            kh,
            kw,
            expected,
            bytes.len()
        )));
    }
    let body_end = bytes.len() - 4;
    let stored = u32_at(body_end);
    let computed = crc32fast::hash(&bytes[8..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let epochs = u32_at(24);
    let hash = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
    let scale = f64::from_le_bytes(bytes[36..44].try_into().unwrap());
    let mut values = bytes[HEADER_LEN..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: u64| -> Vec<f64> { values.by_ref().take(n as usize).collect() };
    let (k, c, kh, kw) = (k as usize, c as usize, kh as usize, kw as usize);
    let w1 = take(per_layer);
    let b1 = take(c as u64);
    let w2 = take(per_layer);
    let b2 = take(k as u64);
    let bad = |e: Error| malformed(e.to_string());
    let layer1 = ConvLayer::new(c, k, kh, kw, w1, b1).map_err(bad)?;
    let layer2 = ConvLayer::new(k, c, kh, kw, w2, b2).map_err(bad)?;
    SLNetModel::from_layers(
        layer1,
        layer2,
        Provenance {
            hyperparams_hash: hash,
            epochs,
            input_scale: scale,
        },
    )
    .map_err(bad)
}

pub fn save_model(model: &SLNetModel, path: &Path) -> Result<()> {
    atomic_write(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<SLNetModel> {
    decode_model(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SLNetModel {
        let mut m = SLNetModel::new(3, 4, 3, 11).unwrap();
        m.provenance = Provenance {
            hyperparams_hash: 0xdead_beef_0123,
            epochs: 7,
            input_scale: 312.0,
        };
        m
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut b = encode_model(&model());
        b[HEADER_LEN + 17] ^= 0x40;
        assert!(matches!(decode_model(&b), Err(Error::Checksum { .. })));
    }

    #[test]
    fn other_version_is_distinct_error() {
        let mut b = encode_model(&model());
        b[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_model(&b),
            Err(Error::WeightsVersion { found: 0, expected: 1 })
        ));
    }

    #[test]
    fn truncation_and_garbage() {
        let b = encode_model(&model());
        assert!(matches!(
            decode_model(&b[..b.len() - 9]),
            Err(Error::MalformedWeights(_))
        ));
        assert!(decode_model(b"nonsense").is_err());
        assert!(decode_model(&[]).is_err());
    }
}

//! Binary map files.
//!
//! Layout, little-endian: a 32-byte header (`GMM1`, version u16, flags u16
//! with bit 0 = quantized, count u64, bbox k as f32, 12 reserved bytes), the
//! records, then a CRC-32 of everything before it. Full records are 44 bytes
//! (kind u8, 3 pad, weight, mean, upper-triangle cov as f32). Quantized records
//! are 34 bytes: kind bit plus four 19-bit fields packed MSB-first into 10
//! bytes, then the six f32 covariance terms.

use std::path::Path;

use crate::error::{Error, MapFileError, Result};
use crate::map::GaussianMap;
use crate::quant::{decode_bits, encode_bits, QuantConfig, TOTAL_BITS};
use crate::rtree::DEFAULT_NODE_MAX;
use crate::types::{Gaussian3, Kind, SymMat3, Vec3};

pub const MAGIC: &[u8; 4] = b"GMM1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 32;
pub const CRC_BYTES: usize = 4;
pub const FULL_RECORD_BYTES: usize = 44;
pub const QUANT_RECORD_BYTES: usize = 34;
const FLAG_QUANTIZED: u16 = 1;

pub fn record_bytes(quant: QuantConfig) -> usize {
    if quant.enabled {
        QUANT_RECORD_BYTES
    } else {
        FULL_RECORD_BYTES
    }
}

/// Size of the serialized map, computed without serializing.
pub fn map_size_bytes(map: &GaussianMap) -> usize {
    HEADER_BYTES + map.len() * record_bytes(map.quant()) + CRC_BYTES
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn encode_record(out: &mut Vec<u8>, g: &Gaussian3, quant: QuantConfig) {
    if quant.enabled {
        let mut bits = u128::from(g.kind.as_u8());
        for v in [g.weight, g.mean.x, g.mean.y, g.mean.z] {
            bits = (bits << TOTAL_BITS) | u128::from(encode_bits(v));
        }
        bits <<= 80 - (1 + 4 * TOTAL_BITS);
        out.extend_from_slice(&bits.to_be_bytes()[6..]);
    } else {
        out.push(g.kind.as_u8());
        out.extend_from_slice(&[0; 3]);
        put_f32(out, g.weight);
        for v in g.mean.iter() {
            put_f32(out, *v);
        }
    }
    for v in g.cov.to_array() {
        put_f32(out, v);
    }
}

pub fn encode_map(map: &GaussianMap) -> Vec<u8> {
    let quant = map.quant();
    let mut out = Vec::with_capacity(map_size_bytes(map));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(if quant.enabled { FLAG_QUANTIZED } else { 0 }).to_le_bytes());
    out.extend_from_slice(&(map.len() as u64).to_le_bytes());
    put_f32(&mut out, map.bbox_k());
    out.extend_from_slice(&[0; 12]);
    for g in map.iter() {
        encode_record(&mut out, g, quant);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn f32_at(b: &[u8], at: usize) -> f64 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes")) as f64
}

fn decode_record(b: &[u8], index: u64, quant: QuantConfig) -> std::result::Result<Gaussian3, MapFileError> {
    let bad = |msg: &str| MapFileError::BadRecord { index, msg: msg.to_string() };
    let (kind, weight, mean, cov_at) = if quant.enabled {
        let mut wide = [0u8; 16];
        wide[6..].copy_from_slice(&b[..10]);
        let bits = u128::from_be_bytes(wide);
        if bits & 0b111 != 0 {
            return Err(bad("nonzero padding bits"));
        }
        let field = |i: u32| decode_bits(((bits >> (3 + (3 - i) * TOTAL_BITS)) & ((1 << TOTAL_BITS) - 1)) as u32);
        let kind = (bits >> (3 + 4 * TOTAL_BITS)) as u8;
        (kind, field(0), Vec3::new(field(1), field(2), field(3)), 10)
    } else {
        if b[1..4] != [0; 3] {
            return Err(bad("nonzero padding bytes"));
        }
        (b[0], f32_at(b, 4), Vec3::new(f32_at(b, 8), f32_at(b, 12), f32_at(b, 16)), 20)
    };
    let kind = Kind::from_u8(kind).ok_or_else(|| bad("unknown kind"))?;
    let mut cov = [0.0; 6];
    for (i, c) in cov.iter_mut().enumerate() {
        *c = f32_at(b, cov_at + 4 * i);
    }
    let g = Gaussian3::new(kind, weight, mean, SymMat3::from_array(cov));
    if !g.is_valid() {
        return Err(bad("invalid Gaussian"));
    }
    Ok(g)
}

/// Parses a map file. Ids are reassigned 1..=n in file order.
pub fn decode_map(bytes: &[u8]) -> Result<GaussianMap> {
    let min = HEADER_BYTES + CRC_BYTES;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        if bytes.len() < 4 {
            return Err(MapFileError::Truncated { expected: min as u64, found: bytes.len() as u64 }.into());
        }
        return Err(MapFileError::BadMagic.into());
    }
    if bytes.len() < min {
        return Err(MapFileError::Truncated { expected: min as u64, found: bytes.len() as u64 }.into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(MapFileError::VersionMismatch(version).into());
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    let quant = QuantConfig { enabled: flags & FLAG_QUANTIZED != 0 };
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let k = f32_at(bytes, 16);
    let rec = record_bytes(quant);
    let expected = usize::try_from(count)
        .ok()
        .and_then(|n| n.checked_mul(rec))
        .and_then(|n| n.checked_add(min))
        .unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(MapFileError::Truncated { expected: expected as u64, found: bytes.len() as u64 }.into());
    }
    let body = &bytes[..bytes.len() - CRC_BYTES];
    let stored = u32::from_le_bytes(bytes[body.len()..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(MapFileError::Checksum { stored, computed }.into());
    }
    let mut map = GaussianMap::with_node_max(quant, k, DEFAULT_NODE_MAX)
        .map_err(|_| MapFileError::BadRecord { index: 0, msg: format!("bad bbox scale {k}") })?;
    for (i, chunk) in body[HEADER_BYTES..].chunks_exact(rec).enumerate() {
        let mut g = decode_record(chunk, i as u64, quant)?;
        g.id = i as u64 + 1;
        map.insert_raw(g)?;
    }
    Ok(map)
}

pub fn save_map(map: &GaussianMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_map(map)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_map(path: &Path) -> Result<GaussianMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_map(&bytes)
}

/// Field-by-field bit equality of two maps' Gaussians (ids ignored) and configs.
pub fn same_content(a: &GaussianMap, b: &GaussianMap) -> bool {
    a.len() == b.len()
        && a.quant() == b.quant()
        && a.bbox_k().to_bits() == b.bbox_k().to_bits()
        && a.iter().zip(b.iter()).all(|(x, y)| {
            x.kind == y.kind
                && x.weight.to_bits() == y.weight.to_bits()
                && x.mean.iter().zip(y.mean.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
                && x.cov.to_array().iter().zip(y.cov.to_array().iter()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

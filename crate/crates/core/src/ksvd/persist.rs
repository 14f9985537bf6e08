//! Binary dictionary files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | field                                   |
//! |--------------|-----------------------------------------|
//! | 4            | magic `SPQD`                            |
//! | 4            | format version (`u32`, currently 1)     |
//! | 4 x 4        | `n`, `m`, `tau`, `patch_side` (`u32`)   |
//! | 8 * n * m    | atoms as `f64`, column-major            |
//! | 8            | checksum of the atom block (`u64`)      |
//!
//! The checksum is the first eight bytes of the SHA-256 digest of the atom
//! block, read as a little-endian `u64`.

use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::Dictionary;

pub const MAGIC: &[u8; 4] = b"SPQD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5;

/// Training parameters stored alongside the atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictionaryHeader {
    pub tau: u32,
    pub patch_side: u32,
}

fn checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::MalformedFile(format!("{what} {v} does not fit in u32")))
}

pub fn encode_dictionary(dict: &Dictionary, header: DictionaryHeader) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * dict.n() * dict.m() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dict.n(), "n")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dict.m(), "m")?.to_le_bytes());
    out.extend_from_slice(&header.tau.to_le_bytes());
    out.extend_from_slice(&header.patch_side.to_le_bytes());
    for v in dict.atoms().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = checksum(&out[HEADER_LEN..]);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<(Dictionary, DictionaryHeader)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedFile(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::MalformedFile("bad magic".into()));
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::MalformedFile(format!("unsupported format version {version}")));
    }
    let n = read_u32(bytes, 8) as usize;
    let m = read_u32(bytes, 12) as usize;
    let header = DictionaryHeader {
        tau: read_u32(bytes, 16),
        patch_side: read_u32(bytes, 20),
    };
    let payload_len = n
        .checked_mul(m)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::MalformedFile(format!("size {n} x {m} overflows")))?;
    let expected = HEADER_LEN + payload_len + 8;
    if bytes.len() != expected {
        return Err(Error::MalformedFile(format!(
            "expected {expected} bytes for a {n} x {m} dictionary, found {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
    if stored != checksum(payload) {
        return Err(Error::MalformedFile("checksum mismatch".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let dict = Dictionary::new(DMatrix::from_vec(n, m, values))?;
    Ok((dict, header))
}

pub fn save_dictionary(path: impl AsRef<Path>, dict: &Dictionary, header: DictionaryHeader) -> Result<()> {
    std::fs::write(path, encode_dictionary(dict, header)?)?;
    Ok(())
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<(Dictionary, DictionaryHeader)> {
    decode_dictionary(&std::fs::read(path)?)
}

//! Bit-vector helpers shared by the wire codec and the distillation stages.

use sha2::{Digest, Sha256};

/// Packs bits LSB-first into bytes.
pub fn pack(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &bit) in bits.iter().enumerate() {
        if bit {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

/// Inverse of [`pack`]; returns `None` if `bytes` is too short for `len` bits.
pub fn unpack(bytes: &[u8], len: usize) -> Option<Vec<bool>> {
    if bytes.len() < len.div_ceil(8) {
        return None;
    }
    Some((0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

/// Packs bits LSB-first into 64-bit words.
pub fn pack_words(bits: &[bool]) -> Vec<u64> {
    let mut out = vec![0u64; bits.len().div_ceil(64)];
    for (i, &bit) in bits.iter().enumerate() {
        if bit {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

pub fn parity<'a>(bits: impl IntoIterator<Item = &'a bool>) -> bool {
    bits.into_iter().fold(false, |acc, &b| acc ^ b)
}

pub fn hamming_distance(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// SHA-256 over the bit length (u64 LE) followed by the packed bits.
pub fn digest(bits: &[bool]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((bits.len() as u64).to_le_bytes());
    hasher.update(pack(bits));
    hasher.finalize().into()
}

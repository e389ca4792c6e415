//! Toeplitz universal₂ hashing for privacy amplification.
//!
//! An `m × n` Toeplitz matrix is fixed by `n + m − 1` seed bits:
//! `T[i][j] = seed[i − j + n − 1]`. Output bit `i` is the GF(2) inner product
//! of row `i` with the key. Reading row `i` left to right walks the seed
//! backwards from `i + n − 1` to `i`, so with the key reversed every output
//! bit is the parity of a contiguous `n`-bit seed window ANDed with it; the
//! windows are evaluated 64 bits at a time.

use crate::bits::pack_words;
use crate::error::{Error, Result};

pub fn seed_len(n: usize, m: usize) -> usize {
    if m == 0 || n == 0 {
        0
    } else {
        n + m - 1
    }
}

pub fn toeplitz_hash(key: &[bool], seed: &[bool], m: usize) -> Result<Vec<bool>> {
    let n = key.len();
    if m == 0 || n == 0 {
        return Ok(Vec::new());
    }
    if m > n {
        return Err(Error::invalid("m", format!("output length {m} exceeds input length {n}")));
    }
    if seed.len() != seed_len(n, m) {
        return Err(Error::invalid(
            "seed",
            format!("expected {} seed bits, got {}", seed_len(n, m), seed.len()),
        ));
    }

    let reversed: Vec<bool> = key.iter().rev().copied().collect();
    let key_words = pack_words(&reversed);
    let mut seed_words = pack_words(seed);
    seed_words.push(0); // window reads may touch one word past the end
    let tail_bits = n % 64;
    let tail_mask = if tail_bits == 0 { u64::MAX } else { (1u64 << tail_bits) - 1 };

    let out = (0..m)
        .map(|i| {
            let mut acc = 0u64;
            for (w, &kw) in key_words.iter().enumerate() {
                let mut window = extract(&seed_words, i + 64 * w);
                if w + 1 == key_words.len() {
                    window &= tail_mask;
                }
                acc ^= window & kw;
            }
            acc.count_ones() & 1 == 1
        })
        .collect();
    Ok(out)
}

/// 64 bits of `words` starting at bit `offset` (LSB-first).
fn extract(words: &[u64], offset: usize) -> u64 {
    let idx = offset / 64;
    let shift = offset % 64;
    let lo = words.get(idx).copied().unwrap_or(0) >> shift;
    if shift == 0 {
        lo
    } else {
        lo | words.get(idx + 1).copied().unwrap_or(0) << (64 - shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Straight matrix-vector product from the definition.
    fn naive(key: &[bool], seed: &[bool], m: usize) -> Vec<bool> {
        let n = key.len();
        (0..m)
            .map(|i| (0..n).fold(false, |acc, j| acc ^ (seed[i + n - 1 - j] & key[j])))
            .collect()
    }

    #[test]
    fn matches_definition_on_small_cases() {
        let mut rng = substream(11, "test");
        for n in [1usize, 2, 63, 64, 65, 130, 300] {
            for m in [1usize, n / 2 + 1, n] {
                let key: Vec<bool> = (0..n).map(|_| rng.random()).collect();
                let seed: Vec<bool> = (0..seed_len(n, m)).map(|_| rng.random()).collect();
                assert_eq!(toeplitz_hash(&key, &seed, m).unwrap(), naive(&key, &seed, m), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn argument_checks() {
        assert!(toeplitz_hash(&[true; 4], &[true; 4], 2).is_err());
        assert!(toeplitz_hash(&[true; 4], &[true; 8], 5).is_err());
        assert!(toeplitz_hash(&[true; 4], &[], 0).unwrap().is_empty());
        assert_eq!(seed_len(0, 3), 0);
    }

    proptest! {
        #[test]
        fn word_path_equals_naive(
            key in proptest::collection::vec(any::<bool>(), 1..200),
            frac in 0.0f64..1.0,
            seed_bits in proptest::collection::vec(any::<bool>(), 400),
        ) {
            let n = key.len();
            let m = ((n as f64 * frac) as usize).max(1);
            let seed = &seed_bits[..seed_len(n, m)];
            prop_assert_eq!(toeplitz_hash(&key, seed, m).unwrap(), naive(&key, seed, m));
        }
    }
}

//! CASCADE interactive error correction.
//!
//! Bob holds the noisy key and drives the exchange; Alice only answers parity
//! queries over ranges of a pass-specific permutation of her key. Pass `i`
//! uses blocks of `k₁·2ⁱ` bits with `k₁ = ⌈0.73 / e⌉`, capped at half the
//! key. Every corrected bit
//! flips the parity of the block holding it in each earlier pass, and any
//! block left with odd disagreement is searched again (the cascade).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::substream;

pub const DEFAULT_PASSES: usize = 4;
/// Above this QBER no positive key remains after reconciliation.
pub const MAX_QBER: f64 = 0.11;

/// One parity request: parity of Alice's bits at permuted positions
/// `start..end` of pass `pass`. `block` is informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParityQuery {
    pub pass: u8,
    pub block: u32,
    pub start: u32,
    pub end: u32,
}

/// Answers parity queries about the reference key.
pub trait ParityOracle {
    fn parity(&mut self, query: ParityQuery) -> Result<bool>;
}

pub fn first_block_size(qber: f64) -> usize {
    (0.73 / qber).ceil() as usize
}

/// Permutation of `0..n` for `pass`, shared by both ends through `seed`.
/// `perm[j]` is the key position found at permuted index `j`.
pub fn pass_permutation(n: usize, seed: u64, pass: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut rng = substream(seed, &format!("cascade/pass{pass}"));
    perm.shuffle(&mut rng);
    perm
}

/// Alice's side: answers queries from her copy of the key.
pub struct ParityResponder {
    key: Vec<bool>,
    seed: u64,
    perms: Vec<Option<Vec<u32>>>,
    answered: u64,
}

impl ParityResponder {
    pub fn new(key: Vec<bool>, seed: u64) -> Self {
        Self {
            key,
            seed,
            perms: Vec::new(),
            answered: 0,
        }
    }

    pub fn answered(&self) -> u64 {
        self.answered
    }

    pub fn into_key(self) -> Vec<bool> {
        self.key
    }

    pub fn key(&self) -> &[bool] {
        &self.key
    }

    pub fn answer(&mut self, q: ParityQuery) -> Result<bool> {
        let n = self.key.len();
        let (start, end) = (q.start as usize, q.end as usize);
        if start >= end || end > n {
            return Err(Error::Protocol(format!(
                "parity range {start}..{end} invalid for a {n}-bit key"
            )));
        }
        let pass = q.pass as usize;
        if pass >= 64 {
            return Err(Error::Protocol(format!("pass {pass} out of range")));
        }
        if self.perms.len() <= pass {
            self.perms.resize(pass + 1, None);
        }
        let seed = self.seed;
        let perm = self.perms[pass].get_or_insert_with(|| pass_permutation(n, seed, pass));
        self.answered += 1;
        Ok(perm[start..end].iter().fold(false, |acc, &i| acc ^ self.key[i as usize]))
    }
}

impl ParityOracle for ParityResponder {
    fn parity(&mut self, query: ParityQuery) -> Result<bool> {
        self.answer(query)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CascadeReport {
    /// Key positions flipped, in correction order.
    pub corrected: Vec<usize>,
    /// Parities obtained from Alice.
    pub parity_bits: u64,
    pub block_sizes: Vec<usize>,
}

struct Pass {
    block_size: usize,
    perm: Vec<u32>,
    /// key position → permuted index
    inverse: Vec<u32>,
    alice: Vec<bool>,
    bob: Vec<bool>,
}

impl Pass {
    fn blocks(&self) -> usize {
        self.perm.len().div_ceil(self.block_size)
    }

    fn block_range(&self, block: usize) -> (usize, usize) {
        let start = block * self.block_size;
        (start, (start + self.block_size).min(self.perm.len()))
    }

    fn block_of(&self, position: usize) -> usize {
        self.inverse[position] as usize / self.block_size
    }
}

/// Corrects `key` in place against the oracle's reference.
///
/// `qber` sets the first block size and must lie in (0, 0.11).
pub fn cascade_reconcile<O: ParityOracle + ?Sized>(
    key: &mut [bool],
    qber: f64,
    passes: usize,
    seed: u64,
    oracle: &mut O,
) -> Result<CascadeReport> {
    if qber >= MAX_QBER {
        return Err(Error::QberTooHigh(qber));
    }
    if !(qber > 0.0) {
        return Err(Error::invalid("qber", format!("must be > 0, got {qber}")));
    }
    if passes == 0 || passes > 32 {
        return Err(Error::invalid("passes", "must lie in 1..=32"));
    }
    let n = key.len();
    let mut report = CascadeReport::default();
    if n == 0 {
        return Ok(report);
    }
    if n > u32::MAX as usize {
        return Err(Error::invalid("key", "longer than 2^32 bits"));
    }

    let k1 = first_block_size(qber).max(1);
    // a single whole-key block cannot see an even error count, so later
    // passes keep at least two blocks
    let max_block = n.div_ceil(2).max(1);
    let mut done: Vec<Pass> = Vec::with_capacity(passes);

    for pass_index in 0..passes {
        let block_size = k1.saturating_mul(1 << pass_index).min(max_block);
        let perm = pass_permutation(n, seed, pass_index);
        let mut inverse = vec![0u32; n];
        for (j, &pos) in perm.iter().enumerate() {
            inverse[pos as usize] = j as u32;
        }
        let mut pass = Pass {
            block_size,
            perm,
            inverse,
            alice: Vec::new(),
            bob: Vec::new(),
        };
        report.block_sizes.push(block_size);

        let blocks = pass.blocks();
        pass.alice.reserve(blocks);
        pass.bob.reserve(blocks);
        for block in 0..blocks {
            let (start, end) = pass.block_range(block);
            let query = ParityQuery {
                pass: pass_index as u8,
                block: block as u32,
                start: start as u32,
                end: end as u32,
            };
            pass.alice.push(oracle.parity(query)?);
            report.parity_bits += 1;
            pass.bob.push(range_parity(key, &pass.perm[start..end]));
        }
        done.push(pass);

        let mut odd: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (p, pass) in done.iter().enumerate() {
            for b in 0..pass.blocks() {
                if pass.alice[b] != pass.bob[b] {
                    odd.insert((p, b));
                }
            }
        }

        while let Some((p, b)) = odd.pop_first() {
            let position = binary_search(key, &done[p], p, b, oracle, &mut report)?;
            key[position] = !key[position];
            report.corrected.push(position);
            for (q, pass) in done.iter_mut().enumerate() {
                let block = pass.block_of(position);
                pass.bob[block] = !pass.bob[block];
                if pass.alice[block] != pass.bob[block] {
                    odd.insert((q, block));
                } else {
                    odd.remove(&(q, block));
                }
            }
        }
    }
    Ok(report)
}

fn range_parity(key: &[bool], positions: &[u32]) -> bool {
    positions.iter().fold(false, |acc, &i| acc ^ key[i as usize])
}

/// Halves the odd block until one position is left.
fn binary_search<O: ParityOracle + ?Sized>(
    key: &[bool],
    pass: &Pass,
    pass_index: usize,
    block: usize,
    oracle: &mut O,
    report: &mut CascadeReport,
) -> Result<usize> {
    let (mut start, mut end) = pass.block_range(block);
    while end - start > 1 {
        let mid = start + (end - start) / 2;
        let alice = oracle.parity(ParityQuery {
            pass: pass_index as u8,
            block: block as u32,
            start: start as u32,
            end: mid as u32,
        })?;
        report.parity_bits += 1;
        let bob = range_parity(key, &pass.perm[start..mid]);
        if alice != bob {
            end = mid;
        } else {
            start = mid;
        }
    }
    Ok(pass.perm[start] as usize)
}

//! Key distillation: CASCADE reconciliation and Toeplitz privacy
//! amplification, with a ledger of everything disclosed on the public
//! channel.

pub mod cascade;
pub mod toeplitz;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits;
use crate::error::{Error, Result};
use crate::security::{binary_entropy, secure_fraction, OperatingPoint};

pub use cascade::{cascade_reconcile, CascadeReport, ParityOracle, ParityQuery, ParityResponder};
pub use toeplitz::toeplitz_hash;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakageLedger {
    pub parity_bits_disclosed: u64,
    pub sampled_bits_disclosed: u64,
    /// `S_m / p_exp` used when sizing the final key.
    pub multiphoton_fraction: f64,
    pub f_e_used: f64,
}

impl LeakageLedger {
    pub fn record_parities(&mut self, n: u64) {
        self.parity_bits_disclosed += n;
    }

    pub fn record_sampled(&mut self, n: u64) {
        self.sampled_bits_disclosed += n;
    }

    pub fn total_disclosed(&self) -> u64 {
        self.parity_bits_disclosed + self.sampled_bits_disclosed
    }
}

/// How the amplified length accounts for reconciliation leakage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaMode {
    /// `f(e)·h(e)` per bit, as in the secure-gain formula.
    Formula,
    /// The parity bits actually disclosed, from the ledger.
    LedgerExact,
}

impl std::str::FromStr for PaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "formula" => Ok(PaMode::Formula),
            "ledger_exact" => Ok(PaMode::LedgerExact),
            other => Err(format!("unknown pa mode `{other}` (expected formula or ledger_exact)")),
        }
    }
}

impl std::fmt::Display for PaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PaMode::Formula => "formula",
            PaMode::LedgerExact => "ledger_exact",
        })
    }
}

/// Secure fraction per reconciled bit, `2G / p_exp`, clamped at 0.
pub fn secure_fraction_per_bit(op: &OperatingPoint) -> f64 {
    secure_fraction(op).unwrap_or(0.0).max(0.0)
}

/// Length of the amplified key for `n` reconciled bits.
pub fn amplified_length(n: usize, op: &OperatingPoint, mode: PaMode, ledger: &LeakageLedger) -> usize {
    let m = match mode {
        PaMode::Formula => n as f64 * secure_fraction_per_bit(op),
        PaMode::LedgerExact => {
            // the bracket without the f·h(e) term, minus what was really sent
            let without_ec = secure_fraction(op).map_or(0.0, |b| b + op.f_e * binary_entropy(op.e));
            n as f64 * without_ec - ledger.parity_bits_disclosed as f64
        }
    };
    if m <= 0.0 {
        0
    } else {
        (m.floor() as usize).min(n)
    }
}

pub fn draw_seed<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<bool> {
    (0..toeplitz::seed_len(n, m)).map(|_| rng.random()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistilledKey {
    pub bits: Vec<bool>,
    pub digest: [u8; 32],
}

impl DistilledKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

/// Compresses a reconciled key with the Toeplitz matrix given by `seed`.
/// The output length is implied by the seed length (`n + m − 1`, or empty
/// for `m = 0`).
pub fn privacy_amplify(key: &[bool], seed: &[bool]) -> Result<DistilledKey> {
    let n = key.len();
    let m = if seed.is_empty() {
        0
    } else {
        (seed.len() + 1)
            .checked_sub(n)
            .filter(|&m| m >= 1)
            .ok_or_else(|| Error::invalid("seed", format!("{} seed bits for a {n}-bit key", seed.len())))?
    };
    let out = toeplitz_hash(key, seed, m)?;
    Ok(DistilledKey {
        digest: bits::digest(&out),
        bits: out,
    })
}

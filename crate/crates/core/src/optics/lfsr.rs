//! Fibonacci linear feedback shift registers and pluggable bit sources for
//! Alice's basis/value choices.
//!
//! Tap positions follow the usual polynomial notation: taps `(4, 3)` mean
//! x⁴ + x³ + 1 on a 4-bit register. The register shifts towards the LSB; the
//! output bit is the LSB and the feedback (XOR of the tapped bits, tap `t`
//! being register bit `width - t`) enters at the MSB.
//!
//! An LFSR is linear and therefore predictable. It reproduces the
//! demonstration hardware, nothing more; use [`RngBits`] over a CSPRNG when
//! the stream matters.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// Maximal-length taps for a 32-bit register: x³² + x²² + x² + x + 1.
pub const MAXIMAL_TAPS_32: [u32; 4] = [32, 22, 2, 1];

/// Source of Alice's random choices.
pub trait BitSource {
    fn next_bit(&mut self) -> bool;
}

impl<B: BitSource + ?Sized> BitSource for &mut B {
    fn next_bit(&mut self) -> bool {
        (**self).next_bit()
    }
}

impl<B: BitSource + ?Sized> BitSource for Box<B> {
    fn next_bit(&mut self) -> bool {
        (**self).next_bit()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lfsr {
    width: u32,
    tap_mask: u64,
    state: u64,
}

impl Lfsr {
    pub fn new(taps: &[u32], state: u64) -> Result<Self> {
        let width = taps.iter().copied().max().unwrap_or(0);
        if width == 0 || width > 64 || taps.contains(&0) {
            return Err(Error::invalid("taps", format!("taps must lie in 1..=64, got {taps:?}")));
        }
        let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        if state & mask == 0 || state & !mask != 0 {
            return Err(Error::invalid(
                "state",
                format!("state must be a nonzero {width}-bit value, got {state:#x}"),
            ));
        }
        let tap_mask = taps.iter().fold(0u64, |m, &t| m | 1 << (width - t));
        Ok(Self {
            width,
            tap_mask,
            state,
        })
    }

    /// 32-bit maximal-length register ([`MAXIMAL_TAPS_32`]).
    pub fn maximal32(seed: u32) -> Result<Self> {
        Self::new(&MAXIMAL_TAPS_32, u64::from(seed))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn step(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let feedback = (self.state & self.tap_mask).count_ones() & 1;
        self.state = (self.state >> 1) | (u64::from(feedback) << (self.width - 1));
        out
    }
}

impl BitSource for Lfsr {
    fn next_bit(&mut self) -> bool {
        self.step()
    }
}

/// Runs a register from `state` for `count` steps, returning the output bits
/// and the final state.
pub fn lfsr_next_bits(state: u64, taps: &[u32], count: usize) -> Result<(Vec<bool>, u64)> {
    let mut lfsr = Lfsr::new(taps, state)?;
    let bits = (0..count).map(|_| lfsr.step()).collect();
    Ok((bits, lfsr.state()))
}

/// Uniform bits drawn from any [`RngCore`].
#[derive(Debug, Clone)]
pub struct RngBits<R> {
    rng: R,
}

impl<R: RngCore> RngBits<R> {
    pub fn new(rng: R) -> Self {
        Self { rng }
    }
}

impl<R: RngCore> BitSource for RngBits<R> {
    fn next_bit(&mut self) -> bool {
        self.rng.random()
    }
}

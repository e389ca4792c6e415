//! Photon sources: weak coherent pulses and sub-Poissonian single-photon
//! pulses.
//!
//! A weak coherent pulse (WCP) carries a Poisson(μ) photon number, so the
//! multiphoton probability is μ²/2 to leading order. A single-photon pulse
//! (SPP) has its two-photon events suppressed by the zero-delay normalized
//! correlation `C`: P(n ≥ 2) = C·μ²/2. The SPP law is truncated at n = 2 and
//! P(1), P(0) follow from the mean:
//!
//! ```text
//! P(2) = C μ² / 2,   P(1) = μ − 2 P(2),   P(0) = 1 − P(1) − P(2)
//! ```
//!
//! Emission instants are exponential with the emitter lifetime, measured from
//! the excitation instant.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NV-centre excited-state lifetime in a 40 nm nanocrystal.
pub const NV_LIFETIME_NS: f64 = 23.0;
/// 5.3 MHz excitation.
pub const PULSE_PERIOD_NS: f64 = 187.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Wcp,
    Spp,
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SourceKind::Wcp => "wcp",
            SourceKind::Spp => "spp",
        })
    }
}

impl std::str::FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wcp" => Ok(SourceKind::Wcp),
            "spp" => Ok(SourceKind::Spp),
            other => Err(format!("unknown source kind `{other}` (expected wcp or spp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    kind: SourceKind,
    mu: f64,
    suppression_c: f64,
    lifetime_ns: f64,
    pulse_period_ns: f64,
}

impl SourceModel {
    pub fn new(
        kind: SourceKind,
        mu: f64,
        suppression_c: f64,
        lifetime_ns: f64,
        pulse_period_ns: f64,
    ) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::invalid("mu", format!("must be finite and >= 0, got {mu}")));
        }
        if !(lifetime_ns.is_finite() && lifetime_ns > 0.0) {
            return Err(Error::invalid("lifetime_ns", format!("must be > 0, got {lifetime_ns}")));
        }
        if !(pulse_period_ns.is_finite() && pulse_period_ns > 0.0) {
            return Err(Error::invalid(
                "pulse_period_ns",
                format!("must be > 0, got {pulse_period_ns}"),
            ));
        }
        let suppression_c = match kind {
            SourceKind::Wcp => 1.0,
            SourceKind::Spp => {
                if !(0.0..=1.0).contains(&suppression_c) {
                    return Err(Error::invalid(
                        "suppression_c",
                        format!("must lie in [0, 1], got {suppression_c}"),
                    ));
                }
                let p2 = suppression_c * mu * mu / 2.0;
                let p1 = mu - 2.0 * p2;
                if p1 < 0.0 || p1 + p2 > 1.0 {
                    return Err(Error::invalid(
                        "mu",
                        format!(
                            "(mu = {mu}, C = {suppression_c}) admits no truncated photon-number law"
                        ),
                    ));
                }
                suppression_c
            }
        };
        Ok(Self {
            kind,
            mu,
            suppression_c,
            lifetime_ns,
            pulse_period_ns,
        })
    }

    pub fn wcp(mu: f64) -> Result<Self> {
        Self::new(SourceKind::Wcp, mu, 1.0, NV_LIFETIME_NS, PULSE_PERIOD_NS)
    }

    pub fn spp(mu: f64, suppression_c: f64) -> Result<Self> {
        Self::new(SourceKind::Spp, mu, suppression_c, NV_LIFETIME_NS, PULSE_PERIOD_NS)
    }

    pub fn with_timing(self, lifetime_ns: f64, pulse_period_ns: f64) -> Result<Self> {
        Self::new(self.kind, self.mu, self.suppression_c, lifetime_ns, pulse_period_ns)
    }

    /// Same source seen through a linear loss of transmittance `t`. Thinning
    /// scales μ and leaves `C` unchanged.
    pub fn attenuated(self, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid("transmittance", format!("must lie in [0, 1], got {t}")));
        }
        Self::new(self.kind, self.mu * t, self.suppression_c, self.lifetime_ns, self.pulse_period_ns)
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn suppression_c(&self) -> f64 {
        self.suppression_c
    }

    pub fn lifetime_ns(&self) -> f64 {
        self.lifetime_ns
    }

    pub fn pulse_period_ns(&self) -> f64 {
        self.pulse_period_ns
    }

    pub fn pulse_rate_hz(&self) -> f64 {
        1e9 / self.pulse_period_ns
    }

    /// Probability that a pulse carries two photons or more: μ²/2 for WCP,
    /// C·μ²/2 for SPP.
    pub fn multiphoton_probability(&self) -> f64 {
        self.suppression_c * self.mu * self.mu / 2.0
    }

    /// `[P(0), P(1), P(2)]` of the truncated SPP law. Only meaningful for SPP.
    pub fn spp_law(&self) -> [f64; 3] {
        let p2 = self.multiphoton_probability();
        let p1 = self.mu - 2.0 * p2;
        [1.0 - p1 - p2, p1, p2]
    }

    pub fn sample_photon_number<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.mu == 0.0 {
            return 0;
        }
        match self.kind {
            SourceKind::Wcp => {
                let poisson = Poisson::new(self.mu).expect("mu validated > 0");
                poisson.sample(rng) as u32
            }
            SourceKind::Spp => {
                let [_, p1, p2] = self.spp_law();
                let u: f64 = rng.random();
                if u < p2 {
                    2
                } else if u < p2 + p1 {
                    1
                } else {
                    0
                }
            }
        }
    }

    /// Draws one pulse: photon number plus per-photon emission offsets.
    pub fn emit<R: Rng + ?Sized>(&self, slot_index: u64, rng: &mut R) -> EmittedPulse {
        let count = self.sample_photon_number(rng);
        let offsets = exponential_offsets(count as usize, self.lifetime_ns, rng);
        EmittedPulse::new(slot_index, offsets)
    }
}

/// Multiphoton probability of `model`; see [`SourceModel::multiphoton_probability`].
pub fn multiphoton_probability(model: &SourceModel) -> f64 {
    model.multiphoton_probability()
}

/// `count` independent Exponential(mean = `lifetime_ns`) emission delays.
pub fn sample_emission_times<R: Rng + ?Sized>(
    count: usize,
    lifetime_ns: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(lifetime_ns.is_finite() && lifetime_ns > 0.0) {
        return Err(Error::invalid("lifetime_ns", format!("must be > 0, got {lifetime_ns}")));
    }
    Ok(exponential_offsets(count, lifetime_ns, rng))
}

fn exponential_offsets<R: Rng + ?Sized>(count: usize, lifetime_ns: f64, rng: &mut R) -> Vec<f64> {
    if count == 0 {
        return Vec::new();
    }
    let exp = Exp::new(1.0 / lifetime_ns).expect("lifetime validated > 0");
    (0..count).map(|_| exp.sample(rng)).collect()
}

/// Photons of one clock slot, each tagged with its delay after the
/// excitation instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmittedPulse {
    slot_index: u64,
    offsets_ns: Vec<f64>,
}

impl EmittedPulse {
    /// Offsets must be non-negative.
    pub fn new(slot_index: u64, offsets_ns: Vec<f64>) -> Self {
        debug_assert!(offsets_ns.iter().all(|&t| t >= 0.0));
        Self {
            slot_index,
            offsets_ns,
        }
    }

    pub fn empty(slot_index: u64) -> Self {
        Self::new(slot_index, Vec::new())
    }

    pub fn slot_index(&self) -> u64 {
        self.slot_index
    }

    pub fn photon_count(&self) -> usize {
        self.offsets_ns.len()
    }

    pub fn emission_offsets_ns(&self) -> &[f64] {
        &self.offsets_ns
    }

    /// Keeps each photon independently with probability `p`.
    pub fn thin<R: Rng + ?Sized>(mut self, p: f64, rng: &mut R) -> Self {
        if p < 1.0 {
            self.offsets_ns.retain(|_| rng.random::<f64>() < p);
        }
        self
    }
}

//! Monte Carlo optical chain: Alice's polarization encoder, the lossy
//! on-line channel, and Bob's passive-basis four-detector receiver.
//!
//! Every stage is a Bernoulli thinning of the photons of a slot. Bob's
//! receiver sends each photon to the H-V or L-R arm with probability ½; in the
//! matching arm the photon lands on the right detector except for the
//! misalignment error of that basis, in the other arm it picks a detector at
//! random. Each detector also produces a dark click inside the gate with
//! probability `d_i × gate`.

pub mod lfsr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{EmittedPulse, SourceModel};

pub use lfsr::{lfsr_next_bits, BitSource, Lfsr, RngBits, MAXIMAL_TAPS_32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    /// H-V.
    Rectilinear,
    /// L-R.
    Circular,
}

impl Basis {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Basis::Circular
        } else {
            Basis::Rectilinear
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Basis::Rectilinear => 0,
            Basis::Circular => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Basis::Rectilinear),
            1 => Some(Basis::Circular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    L,
    R,
}

impl Polarization {
    pub const ALL: [Polarization; 4] = [Polarization::H, Polarization::V, Polarization::L, Polarization::R];

    /// H and L encode 0, V and R encode 1.
    pub fn encode(basis: Basis, bit: bool) -> Self {
        match (basis, bit) {
            (Basis::Rectilinear, false) => Polarization::H,
            (Basis::Rectilinear, true) => Polarization::V,
            (Basis::Circular, false) => Polarization::L,
            (Basis::Circular, true) => Polarization::R,
        }
    }

    pub fn basis(self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Rectilinear,
            Polarization::L | Polarization::R => Basis::Circular,
        }
    }

    pub fn bit(self) -> bool {
        matches!(self, Polarization::V | Polarization::R)
    }

    pub fn orthogonal(self) -> Self {
        Self::encode(self.basis(), !self.bit())
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Polarization::H => 'H',
            Polarization::V => 'V',
            Polarization::L => 'L',
            Polarization::R => 'R',
        }
    }
}

/// Driver for Alice's basis and value choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BitGenerator {
    /// 32-bit maximal-length Fibonacci LFSR, as in the hardware driver.
    #[default]
    Lfsr,
    ChaCha,
}

impl BitGenerator {
    /// Bit stream seeded from `seed` under the name `alice/bits`.
    pub fn source(self, seed: u64) -> Box<dyn BitSource + Send> {
        let child = crate::rng::derive_seed(seed, "alice/bits");
        match self {
            BitGenerator::Lfsr => {
                let state = (child as u32).max(1);
                Box::new(Lfsr::maximal32(state).expect("nonzero 32-bit state"))
            }
            BitGenerator::ChaCha => Box::new(RngBits::new(crate::rng::substream(seed, "alice/bits"))),
        }
    }
}

impl std::str::FromStr for BitGenerator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lfsr" => Ok(BitGenerator::Lfsr),
            "chacha" => Ok(BitGenerator::ChaCha),
            other => Err(format!("unknown bit generator `{other}` (expected lfsr or chacha)")),
        }
    }
}

impl std::fmt::Display for BitGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BitGenerator::Lfsr => "lfsr",
            BitGenerator::ChaCha => "chacha",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliceConfig {
    /// EOM transmittance.
    pub t_eom: f64,
    /// Source as seen before the EOM.
    pub source: SourceModel,
}

impl AliceConfig {
    pub fn new(t_eom: f64, source: SourceModel) -> Result<Self> {
        if !(t_eom > 0.0 && t_eom <= 1.0) {
            return Err(Error::invalid("t_eom", format!("must lie in (0, 1], got {t_eom}")));
        }
        Ok(Self { t_eom, source })
    }

    /// Builds the encoder from the mean photon number wanted at Alice's
    /// output: the source runs at `mu_out / t_eom` and the EOM thins it back.
    pub fn from_output_source(t_eom: f64, output: SourceModel) -> Result<Self> {
        let source = SourceModel::new(
            output.kind(),
            output.mu() / t_eom,
            output.suppression_c(),
            output.lifetime_ns(),
            output.pulse_period_ns(),
        )?;
        Self::new(t_eom, source)
    }

    pub fn output_mu(&self) -> f64 {
        self.source.mu() * self.t_eom
    }
}

/// One slot leaving Alice's station.
#[derive(Debug, Clone, PartialEq)]
pub struct AliceSlot {
    pub pulse: EmittedPulse,
    pub polarization: Polarization,
}

/// Lazily generated pulse train; see [`alice_emit`].
pub struct AliceEmitter<'a, B: ?Sized, R> {
    config: &'a AliceConfig,
    bits: &'a mut B,
    rng: R,
    next: u64,
    end: u64,
}

impl<B: BitSource + ?Sized, R: Rng> Iterator for AliceEmitter<'_, B, R> {
    type Item = AliceSlot;

    fn next(&mut self) -> Option<AliceSlot> {
        if self.next >= self.end {
            return None;
        }
        let slot = self.next;
        self.next += 1;
        let basis = Basis::from_bit(self.bits.next_bit());
        let bit = self.bits.next_bit();
        let pulse = self
            .config
            .source
            .emit(slot, &mut self.rng)
            .thin(self.config.t_eom, &mut self.rng);
        Some(AliceSlot {
            pulse,
            polarization: Polarization::encode(basis, bit),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.end - self.next) as usize;
        (n, Some(n))
    }
}

/// Alice's pulse train for slots `0..n_slots`. Basis then value are drawn
/// from `bits` for every slot; photons survive the EOM with probability
/// `t_eom` each.
pub fn alice_emit<'a, B: BitSource + ?Sized, R: Rng>(
    config: &'a AliceConfig,
    bits: &'a mut B,
    n_slots: u64,
    rng: R,
) -> AliceEmitter<'a, B, R> {
    AliceEmitter {
        config,
        bits,
        rng,
        next: 0,
        end: n_slots,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub loss_db: f64,
}

impl ChannelConfig {
    pub fn new(loss_db: f64) -> Result<Self> {
        if !(loss_db.is_finite() && loss_db >= 0.0) {
            return Err(Error::invalid("loss_db", format!("must be finite and >= 0, got {loss_db}")));
        }
        Ok(Self { loss_db })
    }

    pub fn transmittance(&self) -> f64 {
        db_to_transmittance(self.loss_db)
    }
}

pub fn db_to_transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn transmittance_to_db(t: f64) -> f64 {
    -10.0 * t.log10()
}

/// Each photon survives independently with the channel transmittance;
/// emission offsets are untouched.
pub fn channel_transmit<R: Rng + ?Sized>(
    pulse: EmittedPulse,
    config: &ChannelConfig,
    rng: &mut R,
) -> EmittedPulse {
    if config.loss_db == 0.0 {
        return pulse;
    }
    pulse.thin(config.transmittance(), rng)
}

/// Dark-click rates in s⁻¹, indexed like [`Polarization::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarkRates(pub [f64; 4]);

impl DarkRates {
    /// Bob's four APDs including shielded ambient light.
    pub const MEASURED: DarkRates = DarkRates([150.0, 180.0, 380.0, 160.0]);

    pub fn get(&self, channel: Polarization) -> f64 {
        self.0[channel.index()]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoubleClickPolicy {
    /// Slots with more than one gated click are dropped.
    Discard,
    /// One of the gated clicks is kept uniformly at random.
    RandomAssign,
}

impl std::str::FromStr for DoubleClickPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "discard" => Ok(DoubleClickPolicy::Discard),
            "random_assign" => Ok(DoubleClickPolicy::RandomAssign),
            other => Err(format!("unknown double-click policy `{other}`")),
        }
    }
}

impl std::fmt::Display for DoubleClickPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DoubleClickPolicy::Discard => "discard",
            DoubleClickPolicy::RandomAssign => "random_assign",
        })
    }
}

/// Bob's receiver.
///
/// `apd_efficiency` reuses the 0.6 quoted for Alice's control APDs, no
/// separate figure being available for Bob's detectors.
/// `receiver_transmittance` lumps Bob's passive optics; its default makes
/// μ = 0.014 produce the measured 3.93×10⁴ s⁻¹ detections at 5.3 MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BobConfig {
    pub apd_efficiency: f64,
    pub receiver_transmittance: f64,
    pub dark_rates_hz: DarkRates,
    pub gate_width_ns: f64,
    pub pol_error_hv: f64,
    pub pol_error_lr: f64,
    /// Extra flip probability in the matching basis, on top of the static
    /// misalignment. Models the EOM drive dynamics; 0 by default.
    pub dynamic_error: f64,
    pub double_click_policy: DoubleClickPolicy,
}

/// 3.93×10⁴ s⁻¹ / (0.014 × 5.3 MHz × 0.6).
pub const DEFAULT_RECEIVER_TRANSMITTANCE: f64 = 0.8827;

impl Default for BobConfig {
    fn default() -> Self {
        Self {
            apd_efficiency: 0.6,
            receiver_transmittance: DEFAULT_RECEIVER_TRANSMITTANCE,
            dark_rates_hz: DarkRates::MEASURED,
            gate_width_ns: 50.0,
            pol_error_hv: 0.012,
            pol_error_lr: 0.032,
            dynamic_error: 0.0,
            double_click_policy: DoubleClickPolicy::Discard,
        }
    }
}

impl BobConfig {
    pub fn validate(&self, pulse_period_ns: f64) -> Result<()> {
        if !(self.apd_efficiency > 0.0 && self.apd_efficiency <= 1.0) {
            return Err(Error::invalid("apd_efficiency", "must lie in (0, 1]"));
        }
        if !(self.receiver_transmittance > 0.0 && self.receiver_transmittance <= 1.0) {
            return Err(Error::invalid("receiver_transmittance", "must lie in (0, 1]"));
        }
        if self.dark_rates_hz.0.iter().any(|&d| !(d.is_finite() && d >= 0.0)) {
            return Err(Error::invalid("dark_rates_hz", "rates must be finite and >= 0"));
        }
        if !(self.gate_width_ns > 0.0 && self.gate_width_ns <= pulse_period_ns) {
            return Err(Error::invalid(
                "gate_width_ns",
                format!("must lie in (0, {pulse_period_ns}], got {}", self.gate_width_ns),
            ));
        }
        for (name, p) in [
            ("pol_error_hv", self.pol_error_hv),
            ("pol_error_lr", self.pol_error_lr),
            ("dynamic_error", self.dynamic_error),
        ] {
            if !(0.0..0.5).contains(&p) {
                return Err(Error::invalid(name, format!("must lie in [0, 0.5), got {p}")));
            }
        }
        if self.dark_click_probability(Polarization::L) > 1.0 {
            return Err(Error::invalid("dark_rates_hz", "dark probability per gate exceeds 1"));
        }
        Ok(())
    }

    /// Overall probability that a photon reaching Bob fires some detector.
    pub fn detection_efficiency(&self) -> f64 {
        self.apd_efficiency * self.receiver_transmittance
    }

    pub fn dark_click_probability(&self, channel: Polarization) -> f64 {
        self.dark_rates_hz.get(channel) * self.gate_width_ns * 1e-9
    }

    /// Summed over the four detectors.
    pub fn total_dark_probability(&self) -> f64 {
        self.dark_rates_hz.total() * self.gate_width_ns * 1e-9
    }

    /// Error probability for a photon measured in its own basis.
    pub fn basis_error(&self, basis: Basis) -> f64 {
        let stat = match basis {
            Basis::Rectilinear => self.pol_error_hv,
            Basis::Circular => self.pol_error_lr,
        };
        stat + self.dynamic_error - 2.0 * stat * self.dynamic_error
    }

    /// Mean of the two basis errors (Alice picks each basis half the time).
    pub fn mean_basis_error(&self) -> f64 {
        (self.basis_error(Basis::Rectilinear) + self.basis_error(Basis::Circular)) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Click {
    pub channel: Polarization,
    pub gated: bool,
    /// A signal photon fired this detector during the slot (possibly
    /// outside the gate).
    pub signal: bool,
}

/// What Bob's four detectors did during one slot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClickRecord {
    pub slot_index: u64,
    /// At most one entry per channel, ordered H, V, L, R.
    pub clicks: Vec<Click>,
    /// Set only when exactly one gated click survives the double-click policy.
    pub accepted: Option<Polarization>,
}

impl ClickRecord {
    pub fn gated_channels(&self) -> impl Iterator<Item = Polarization> + '_ {
        self.clicks.iter().filter(|c| c.gated).map(|c| c.channel)
    }

    pub fn any_gated(&self) -> bool {
        self.clicks.iter().any(|c| c.gated)
    }

    pub fn signal_clicks(&self) -> usize {
        self.clicks.iter().filter(|c| c.signal).count()
    }

    pub fn accepted_bit(&self) -> Option<(Basis, bool)> {
        self.accepted.map(|p| (p.basis(), p.bit()))
    }
}

/// Bob's response to one slot; see the module docs for the photon path.
pub fn bob_detect<R: Rng + ?Sized>(
    pulse: &EmittedPulse,
    sent: Polarization,
    config: &BobConfig,
    rng: &mut R,
) -> ClickRecord {
    // per channel: None = silent, Some((gated, signal))
    let mut fired: [Option<(bool, bool)>; 4] = [None; 4];
    let efficiency = config.detection_efficiency();

    for &offset in pulse.emission_offsets_ns() {
        let arm = Basis::from_bit(rng.random());
        let channel = if arm == sent.basis() {
            if rng.random::<f64>() < config.basis_error(arm) {
                sent.orthogonal()
            } else {
                sent
            }
        } else {
            Polarization::encode(arm, rng.random())
        };
        if rng.random::<f64>() >= efficiency {
            continue;
        }
        let gated = offset < config.gate_width_ns;
        let slot = &mut fired[channel.index()];
        *slot = Some(match *slot {
            Some((g, _)) => (g || gated, true),
            None => (gated, true),
        });
    }

    for channel in Polarization::ALL {
        if rng.random::<f64>() < config.dark_click_probability(channel) {
            let slot = &mut fired[channel.index()];
            if slot.is_none_or(|(gated, _)| !gated) {
                *slot = Some((true, slot.is_some_and(|(_, s)| s)));
            }
        }
    }

    let clicks: Vec<Click> = Polarization::ALL
        .iter()
        .filter_map(|&channel| {
            fired[channel.index()].map(|(gated, signal)| Click {
                channel,
                gated,
                signal,
            })
        })
        .collect();

    let gated: Vec<Polarization> = clicks.iter().filter(|c| c.gated).map(|c| c.channel).collect();
    let accepted = match gated.len() {
        0 => None,
        1 => Some(gated[0]),
        n => match config.double_click_policy {
            DoubleClickPolicy::Discard => None,
            DoubleClickPolicy::RandomAssign => Some(gated[rng.random_range(0..n)]),
        },
    };

    ClickRecord {
        slot_index: pulse.slot_index(),
        clicks,
        accepted,
    }
}

/// Captured fractions of a detection gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateFractions {
    /// Fraction of single photons emitted inside the gate.
    pub eta_g: f64,
    /// Fraction of uniform background kept.
    pub beta_g: f64,
}

pub fn gate_fractions(gate_width_ns: f64, lifetime_ns: f64, pulse_period_ns: f64) -> Result<GateFractions> {
    if !(lifetime_ns > 0.0) {
        return Err(Error::invalid("lifetime_ns", "must be > 0"));
    }
    if !(gate_width_ns > 0.0 && gate_width_ns <= pulse_period_ns) {
        return Err(Error::invalid(
            "gate_width_ns",
            format!("must lie in (0, {pulse_period_ns}], got {gate_width_ns}"),
        ));
    }
    Ok(GateFractions {
        eta_g: 1.0 - (-gate_width_ns / lifetime_ns).exp(),
        beta_g: gate_width_ns / pulse_period_ns,
    })
}

/// The three stages wired together with independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsChain {
    pub alice: AliceConfig,
    pub channel: ChannelConfig,
    pub bob: BobConfig,
}

/// Alice's choice and Bob's record for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub sent: Polarization,
    pub photons_sent: usize,
    pub record: ClickRecord,
}

impl OpticsChain {
    pub fn new(alice: AliceConfig, channel: ChannelConfig, bob: BobConfig) -> Result<Self> {
        bob.validate(alice.source.pulse_period_ns())?;
        Ok(Self { alice, channel, bob })
    }

    pub fn pulse_period_ns(&self) -> f64 {
        self.alice.source.pulse_period_ns()
    }

    /// Runs `n_slots` slots. The three random streams are derived from `seed`
    /// under stable names, so the Alice-side draws do not depend on the
    /// channel or receiver settings.
    pub fn run<'a, B: BitSource + ?Sized>(
        &'a self,
        bits: &'a mut B,
        n_slots: u64,
        seed: u64,
    ) -> impl Iterator<Item = SlotOutcome> + 'a {
        let mut channel_rng = crate::rng::substream(seed, "optics/channel");
        let mut bob_rng = crate::rng::substream(seed, "optics/bob");
        let alice_rng = crate::rng::substream(seed, "optics/alice");
        alice_emit(&self.alice, bits, n_slots, alice_rng).map(move |slot| {
            let photons_sent = slot.pulse.photon_count();
            let arrived = channel_transmit(slot.pulse, &self.channel, &mut channel_rng);
            let record = bob_detect(&arrived, slot.polarization, &self.bob, &mut bob_rng);
            SlotOutcome {
                sent: slot.polarization,
                photons_sent,
                record,
            }
        })
    }

    /// Expected per-slot probabilities `(signal, dark)` of a gated click,
    /// ignoring double clicks.
    pub fn expected_click_probabilities(&self) -> Result<(f64, f64)> {
        let gates = gate_fractions(
            self.bob.gate_width_ns,
            self.alice.source.lifetime_ns(),
            self.pulse_period_ns(),
        )?;
        let signal = self.alice.output_mu()
            * self.channel.transmittance()
            * self.bob.detection_efficiency()
            * gates.eta_g;
        Ok((signal, self.bob.total_dark_probability()))
    }

    /// Sifted-key error rate predicted from misalignment and dark clicks:
    /// `e = (m·p_signal + ½·p_dark) / (p_signal + p_dark)`.
    pub fn expected_qber(&self) -> Result<f64> {
        let (signal, dark) = self.expected_click_probabilities()?;
        let total = signal + dark;
        if total == 0.0 {
            return Ok(0.5);
        }
        Ok((self.bob.mean_basis_error() * signal + 0.5 * dark) / total)
    }

    /// Dynamic-error setting for which [`Self::expected_qber`] equals
    /// `target`.
    pub fn dynamic_error_for_qber(&self, target: f64) -> Result<f64> {
        let (signal, dark) = self.expected_click_probabilities()?;
        if signal == 0.0 {
            return Err(Error::invalid("target", "no signal clicks to carry the error"));
        }
        let m = (self.bob.pol_error_hv + self.bob.pol_error_lr) / 2.0;
        let d = (target * (signal + dark) - 0.5 * dark - m * signal) / (signal * (1.0 - 2.0 * m));
        if !(0.0..0.5).contains(&d) {
            return Err(Error::invalid(
                "target",
                format!("qber {target} unreachable with static errors alone (needs d = {d})"),
            ));
        }
        Ok(d)
    }
}

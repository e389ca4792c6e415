//! Secure gain against individual attacks, operating-point construction from
//! link parameters, and loss / μ curves.
//!
//! The secure gain per pulse is
//!
//! ```text
//! G = ½ p_exp { (p_exp − S_m)/p_exp · (1 − log₂[1 + 4e′ − 4e′²]) + f(e)·[e log₂ e + (1−e) log₂(1−e)] }
//! e′ = e · p_exp / (p_exp − S_m)
//! ```
//!
//! with `p_exp` the gated click probability at Bob, `S_m` the multiphoton
//! probability at Alice's output, `e` the QBER and `f(e) ≥ 1` the
//! reconciliation inefficiency.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{db_to_transmittance, gate_fractions, DarkRates};
use crate::source::{SourceKind, NV_LIFETIME_NS, PULSE_PERIOD_NS};

/// Reconciliation inefficiency of the best known interactive algorithm,
/// valid for e ≤ 5 %.
pub const F_BEST_KNOWN: f64 = 1.16;
pub const F_BEST_KNOWN_MAX_QBER: f64 = 0.05;

/// Gate assumed for attenuated-laser systems.
pub const WCP_GATE_NS: f64 = 2.0;

/// Binary Shannon entropy in bits; `h(0) = h(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Resolves `f(e)`: the best-known factor is only valid up to 5 % QBER.
pub fn reconciliation_factor(f: f64, e: f64, allow_out_of_range: bool) -> Result<f64> {
    if !(f.is_finite() && f >= 1.0) {
        return Err(Error::invalid("f_e", format!("must be >= 1, got {f}")));
    }
    if f > 1.0 && e > F_BEST_KNOWN_MAX_QBER && !allow_out_of_range {
        return Err(Error::invalid(
            "f_e",
            format!("f = {f} is only tabulated for e <= 5 %, got e = {e}"),
        ));
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub p_exp: f64,
    pub s_m: f64,
    pub e: f64,
    pub f_e: f64,
    pub pulse_rate_hz: f64,
}

impl OperatingPoint {
    /// `s_m >= p_exp` is accepted and evaluates as insecure.
    pub fn new(p_exp: f64, s_m: f64, e: f64, f_e: f64, pulse_rate_hz: f64) -> Result<Self> {
        if !(p_exp > 0.0 && p_exp <= 1.0) {
            return Err(Error::invalid("p_exp", format!("must lie in (0, 1], got {p_exp}")));
        }
        if !(0.0..=1.0).contains(&s_m) {
            return Err(Error::invalid("s_m", format!("must lie in [0, 1], got {s_m}")));
        }
        if !(0.0..=0.5).contains(&e) {
            return Err(Error::invalid("e", format!("must lie in [0, 0.5], got {e}")));
        }
        if !(f_e.is_finite() && f_e >= 1.0) {
            return Err(Error::invalid("f_e", format!("must be >= 1, got {f_e}")));
        }
        if !(pulse_rate_hz > 0.0) {
            return Err(Error::invalid("pulse_rate_hz", "must be > 0"));
        }
        Ok(Self {
            p_exp,
            s_m,
            e,
            f_e,
            pulse_rate_hz,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Secure,
    /// No positive key: multiphoton probability reaches `p_exp`, or the error
    /// terms swamp the bracket.
    Insecure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    /// Secure bits per pulse, clamped at 0.
    pub per_pulse: f64,
    pub regime: Regime,
}

impl Gain {
    pub fn bits_per_second(&self, pulse_rate_hz: f64) -> f64 {
        self.per_pulse * pulse_rate_hz
    }

    pub fn is_secure(&self) -> bool {
        self.regime == Regime::Secure
    }
}

/// The curly bracket of the gain formula (secure fraction per sifted bit),
/// unclamped. `None` when `s_m >= p_exp`.
pub fn secure_fraction(op: &OperatingPoint) -> Option<f64> {
    if op.s_m >= op.p_exp {
        return None;
    }
    let single = (op.p_exp - op.s_m) / op.p_exp;
    let e_single = op.e / single;
    // Eve's information on single-photon bits saturates at e′ = ½.
    let eve_term = if e_single >= 0.5 {
        0.0
    } else {
        1.0 - (1.0 + 4.0 * e_single - 4.0 * e_single * e_single).log2()
    };
    Some(single * eve_term - op.f_e * binary_entropy(op.e))
}

pub fn secure_gain(op: &OperatingPoint) -> Gain {
    match secure_fraction(op) {
        Some(bracket) if bracket > 0.0 => Gain {
            per_pulse: 0.5 * op.p_exp * bracket,
            regime: Regime::Secure,
        },
        _ => Gain {
            per_pulse: 0.0,
            regime: Regime::Insecure,
        },
    }
}

/// How `S_m` is obtained for an operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SmConvention {
    /// `C·μ²/2` from the source at Alice's output (`C = 1` for WCP).
    Formula,
    /// Taken verbatim, e.g. to reproduce a measured (p_exp, S_m, e) triple.
    Explicit(f64),
}

/// Aggregated link description for analytic curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub source: SourceKind,
    /// Mean photon number at Alice's output.
    pub mu: f64,
    pub suppression_c: f64,
    /// Bob's overall detection efficiency (receiver optics × APD).
    pub bob_efficiency: f64,
    /// Dark-click probability per gate, summed over the four detectors.
    pub dark_probability: f64,
    /// Probability that a photon measured in the right basis gives the wrong
    /// bit.
    pub misalignment: f64,
    pub eta_g: f64,
    pub beta_g: f64,
    pub loss_db: f64,
    pub f_e: f64,
    pub pulse_rate_hz: f64,
    pub s_m: SmConvention,
}

impl LinkModel {
    /// Single-photon link with a gate of `gate_ns` on an emitter of lifetime
    /// `lifetime_ns`.
    #[allow(clippy::too_many_arguments)]
    pub fn spp(
        mu: f64,
        suppression_c: f64,
        bob_efficiency: f64,
        dark_rates: DarkRates,
        misalignment: f64,
        gate_ns: f64,
        lifetime_ns: f64,
        pulse_period_ns: f64,
    ) -> Result<Self> {
        let gates = gate_fractions(gate_ns, lifetime_ns, pulse_period_ns)?;
        Self {
            source: SourceKind::Spp,
            mu,
            suppression_c,
            bob_efficiency,
            dark_probability: dark_rates.total() * gate_ns * 1e-9,
            misalignment,
            eta_g: gates.eta_g,
            beta_g: gates.beta_g,
            loss_db: 0.0,
            f_e: 1.0,
            pulse_rate_hz: 1e9 / pulse_period_ns,
            s_m: SmConvention::Formula,
        }
        .validated()
    }

    /// Attenuated-laser link: short gate, every photon inside it.
    pub fn wcp(
        mu: f64,
        bob_efficiency: f64,
        dark_rates: DarkRates,
        misalignment: f64,
        gate_ns: f64,
        pulse_period_ns: f64,
    ) -> Result<Self> {
        if !(gate_ns > 0.0 && gate_ns <= pulse_period_ns) {
            return Err(Error::invalid("gate_ns", format!("must lie in (0, {pulse_period_ns}]")));
        }
        Self {
            source: SourceKind::Wcp,
            mu,
            suppression_c: 1.0,
            bob_efficiency,
            dark_probability: dark_rates.total() * gate_ns * 1e-9,
            misalignment,
            eta_g: 1.0,
            beta_g: gate_ns / pulse_period_ns,
            loss_db: 0.0,
            f_e: 1.0,
            pulse_rate_hz: 1e9 / pulse_period_ns,
            s_m: SmConvention::Formula,
        }
        .validated()
    }

    /// The demonstrated single-photon link: Bob's receiver (0.6 × 0.8827),
    /// measured dark rates, 2.2 % mean misalignment, 50 ns gate.
    pub fn reference_spp(mu: f64, suppression_c: f64) -> Result<Self> {
        Self::spp(
            mu,
            suppression_c,
            REFERENCE_BOB_EFFICIENCY,
            DarkRates::MEASURED,
            REFERENCE_MISALIGNMENT,
            50.0,
            NV_LIFETIME_NS,
            PULSE_PERIOD_NS,
        )
    }

    /// The same receiver behind an attenuated laser with a 2 ns gate.
    pub fn reference_wcp(mu: f64) -> Result<Self> {
        Self::wcp(
            mu,
            REFERENCE_BOB_EFFICIENCY,
            DarkRates::MEASURED,
            REFERENCE_MISALIGNMENT,
            WCP_GATE_NS,
            PULSE_PERIOD_NS,
        )
    }

    pub fn with_loss(mut self, loss_db: f64) -> Result<Self> {
        self.loss_db = loss_db;
        self.validated()
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        self.mu = mu;
        self.validated()
    }

    pub fn with_f(mut self, f_e: f64) -> Result<Self> {
        self.f_e = f_e;
        self.validated()
    }

    pub fn with_s_m(mut self, s_m: SmConvention) -> Result<Self> {
        self.s_m = s_m;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::invalid("mu", format!("must be >= 0, got {}", self.mu)));
        }
        if !(self.loss_db.is_finite() && self.loss_db >= 0.0) {
            return Err(Error::invalid("loss_db", format!("must be >= 0, got {}", self.loss_db)));
        }
        for (name, p) in [
            ("suppression_c", self.suppression_c),
            ("bob_efficiency", self.bob_efficiency),
            ("dark_probability", self.dark_probability),
            ("misalignment", self.misalignment),
            ("eta_g", self.eta_g),
            ("beta_g", self.beta_g),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        if let SmConvention::Explicit(s) = self.s_m {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid("s_m", format!("must lie in [0, 1], got {s}")));
            }
        }
        if !(self.f_e >= 1.0) {
            return Err(Error::invalid("f_e", "must be >= 1"));
        }
        Ok(self)
    }

    pub fn multiphoton_probability(&self) -> f64 {
        match self.s_m {
            SmConvention::Formula => match self.source {
                SourceKind::Wcp => self.mu * self.mu / 2.0,
                SourceKind::Spp => self.suppression_c * self.mu * self.mu / 2.0,
            },
            SmConvention::Explicit(s) => s,
        }
    }
}

/// Bob's overall efficiency in the reference receiver.
pub const REFERENCE_BOB_EFFICIENCY: f64 = 0.6 * crate::optics::DEFAULT_RECEIVER_TRANSMITTANCE;
/// Mean of the 1.2 % (H-V) and 3.2 % (L-R) static errors.
pub const REFERENCE_MISALIGNMENT: f64 = 0.022;

pub fn operating_point_from_link(link: &LinkModel) -> Result<OperatingPoint> {
    let p_signal = link.mu * db_to_transmittance(link.loss_db) * link.bob_efficiency * link.eta_g;
    let p_dark = link.dark_probability;
    let p_exp = 1.0 - (1.0 - p_signal) * (1.0 - p_dark);
    if p_exp <= 0.0 {
        return Err(Error::invalid("link", "no clicks at all: p_exp = 0"));
    }
    let e = ((link.misalignment * p_signal + 0.5 * p_dark) / p_exp).min(0.5);
    OperatingPoint::new(
        p_exp,
        link.multiphoton_probability(),
        e,
        link.f_e,
        link.pulse_rate_hz,
    )
}

pub fn gain_at(link: &LinkModel) -> Result<Gain> {
    Ok(secure_gain(&operating_point_from_link(link)?))
}

const MAX_BISECTION_STEPS: usize = 80;
const LOSS_SEARCH_CEILING_DB: f64 = 400.0;

/// Largest on-line loss (dB) at which the gain still reaches
/// `g_threshold`.
///
/// Bisection on the loss, stopping when the relative gap to the threshold
/// falls under 10⁻⁶ or after 80 steps. The gain is checked to be
/// non-increasing over a coarse grid on the bracket first.
pub fn max_tolerable_loss(link: &LinkModel, g_threshold: f64) -> Result<f64> {
    if !(g_threshold > 0.0) {
        return Err(Error::invalid("g_threshold", "must be > 0"));
    }
    let gain = |loss: f64| -> Result<f64> { Ok(gain_at(&link.with_loss(loss)?)?.per_pulse) };

    let g0 = gain(0.0)?;
    if g0 <= g_threshold {
        return Err(Error::BelowThreshold {
            threshold: g_threshold,
            gain_at_zero: g0,
        });
    }

    let mut hi = 1.0;
    while gain(hi)? > g_threshold {
        hi *= 2.0;
        if hi > LOSS_SEARCH_CEILING_DB {
            return Err(Error::invalid("link", "gain never drops below the threshold"));
        }
    }

    let grid: Vec<f64> = (0..=64).map(|i| hi * i as f64 / 64.0).collect();
    let mut previous = f64::INFINITY;
    for &x in &grid {
        let g = gain(x)?;
        if g > previous * (1.0 + 1e-12) {
            return Err(Error::invalid("link", format!("gain is not monotone in loss near {x:.3} dB")));
        }
        previous = g;
    }

    let mut lo = 0.0;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let g = gain(mid)?;
        if ((g - g_threshold) / g_threshold).abs() < 1e-6 {
            return Ok(mid);
        }
        if g > g_threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Abscissa {
    LossDb,
    Mu,
}

impl Abscissa {
    pub fn column(self) -> &'static str {
        match self {
            Abscissa::LossDb => "loss_db",
            Abscissa::Mu => "mu",
        }
    }
}

impl std::str::FromStr for Abscissa {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "loss" | "loss_db" => Ok(Abscissa::LossDb),
            "mu" => Ok(Abscissa::Mu),
            other => Err(format!("unknown abscissa `{other}` (expected loss or mu)")),
        }
    }
}

impl std::fmt::Display for Abscissa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Abscissa::LossDb => "loss",
            Abscissa::Mu => "mu",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub abscissa: Abscissa,
    pub y_column: String,
    /// Sorted by x; values are clamped at 0.
    pub samples: Vec<(f64, f64)>,
    pub metadata: Vec<(String, String)>,
}

impl RateCurve {
    pub fn new(abscissa: Abscissa, y_column: impl Into<String>) -> Self {
        Self {
            abscissa,
            y_column: y_column.into(),
            samples: Vec::new(),
            metadata: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    /// `# key = value` comment lines, a header row, then `x,y` with 12
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "{},{}", self.abscissa.column(), self.y_column);
        for &(x, y) in &self.samples {
            let _ = writeln!(out, "{},{}", sig12(x), sig12(y));
        }
        out
    }

    /// Index of the largest y.
    pub fn argmax(&self) -> Option<usize> {
        self.samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
    }
}

/// Scientific notation with 12 significant digits.
pub fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

fn link_metadata(curve: &mut RateCurve, link: &LinkModel) {
    curve.push_meta("source", link.source);
    curve.push_meta("mu", link.mu);
    curve.push_meta("suppression_c", link.suppression_c);
    curve.push_meta("loss_db", link.loss_db);
    curve.push_meta("bob_efficiency", link.bob_efficiency);
    curve.push_meta("dark_probability", link.dark_probability);
    curve.push_meta("misalignment", link.misalignment);
    curve.push_meta("eta_g", link.eta_g);
    curve.push_meta("f_e", link.f_e);
}

fn linspace(from: f64, to: f64, steps: usize) -> impl Iterator<Item = f64> {
    (0..steps).map(move |i| from + (to - from) * i as f64 / (steps - 1) as f64)
}

/// Gain sampled at `steps` evenly spaced points of `range` (inclusive).
pub fn sweep_curve(link: &LinkModel, abscissa: Abscissa, range: (f64, f64), steps: usize) -> Result<RateCurve> {
    if steps < 2 {
        return Err(Error::invalid("steps", "need at least 2 samples"));
    }
    let (from, to) = if range.0 <= range.1 { range } else { (range.1, range.0) };
    let mut curve = RateCurve::new(abscissa, "G");
    link_metadata(&mut curve, link);
    for x in linspace(from, to, steps) {
        let point = match abscissa {
            Abscissa::LossDb => link.with_loss(x)?,
            Abscissa::Mu => link.with_mu(x)?,
        };
        curve.samples.push((x, gain_at(&point)?.per_pulse));
    }
    Ok(curve)
}

/// Maximum tolerable loss as a function of μ. Points where even 0 dB is
/// below threshold are reported as 0 dB.
pub fn max_loss_curve(link: &LinkModel, mu_range: (f64, f64), steps: usize, g_threshold: f64) -> Result<RateCurve> {
    if steps < 2 {
        return Err(Error::invalid("steps", "need at least 2 samples"));
    }
    let mut curve = RateCurve::new(Abscissa::Mu, "max_loss_db");
    link_metadata(&mut curve, link);
    curve.push_meta("g_threshold", g_threshold);
    for mu in linspace(mu_range.0, mu_range.1, steps) {
        let loss = match max_tolerable_loss(&link.with_mu(mu)?, g_threshold) {
            Ok(l) => l,
            Err(Error::BelowThreshold { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        curve.samples.push((mu, loss));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_point(f: f64) -> OperatingPoint {
        OperatingPoint::new(7.4e-3, 1.9e-6, 0.046, f, 5.3e6).unwrap()
    }

    #[test]
    fn entropy_edges() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        assert!((binary_entropy(0.046) - 0.2692).abs() < 1e-4);
    }

    #[test]
    fn demonstrated_operating_point() {
        let g = secure_gain(&demo_point(1.0));
        assert!(g.is_secure());
        assert!((g.per_pulse - 1.8e-3).abs() < 0.05e-3, "{}", g.per_pulse);
        let n = g.bits_per_second(5.3e6);
        assert!((n / 9.5e3 - 1.0).abs() < 0.03, "{n}");
    }

    #[test]
    fn best_known_reconciliation() {
        let g = secure_gain(&demo_point(1.16)).per_pulse;
        // ½·7.4e-3·(0.766428 − 1.16·0.269150)
        assert!((g - 1.6805e-3).abs() < 0.001e-3, "{g}");
    }

    #[test]
    fn ideal_point_gives_half_p_exp() {
        for &p in &[1e-5, 7.4e-3, 0.3, 1.0] {
            for &f in &[1.0, 1.16, 1.5] {
                let op = OperatingPoint::new(p, 0.0, 0.0, f, 1.0).unwrap();
                assert_eq!(secure_gain(&op).per_pulse, p / 2.0);
            }
        }
    }

    #[test]
    fn multiphoton_swamping_is_flagged() {
        let op = OperatingPoint::new(1e-3, 1e-3, 0.01, 1.0, 1.0).unwrap();
        let g = secure_gain(&op);
        assert_eq!(g.per_pulse, 0.0);
        assert_eq!(g.regime, Regime::Insecure);
        let op = OperatingPoint::new(1e-3, 0.0, 0.2, 1.0, 1.0).unwrap();
        assert_eq!(secure_gain(&op).regime, Regime::Insecure);
    }

    #[test]
    fn reconciliation_factor_range() {
        assert!(reconciliation_factor(1.16, 0.046, false).is_ok());
        assert!(reconciliation_factor(1.16, 0.06, false).is_err());
        assert!(reconciliation_factor(1.16, 0.06, true).is_ok());
        assert!(reconciliation_factor(1.0, 0.2, false).is_ok());
        assert!(reconciliation_factor(0.9, 0.01, false).is_err());
    }

    #[test]
    fn operating_point_edges() {
        let link = LinkModel::reference_spp(0.0, 0.07).unwrap();
        let op = operating_point_from_link(&link).unwrap();
        assert!((op.p_exp - link.dark_probability).abs() < 1e-15);
        assert_eq!(op.e, 0.5);

        let mut quiet = LinkModel::reference_spp(0.014, 0.07).unwrap();
        quiet.dark_probability = 0.0;
        quiet.misalignment = 0.0;
        assert_eq!(operating_point_from_link(&quiet).unwrap().e, 0.0);
    }

    #[test]
    fn explicit_s_m_is_used_verbatim() {
        let link = LinkModel::reference_spp(0.014, 0.07)
            .unwrap()
            .with_s_m(SmConvention::Explicit(1.9e-6))
            .unwrap();
        assert_eq!(operating_point_from_link(&link).unwrap().s_m, 1.9e-6);
        let formula = LinkModel::reference_spp(0.014, 0.07).unwrap();
        assert!((operating_point_from_link(&formula).unwrap().s_m - 6.86e-6).abs() < 1e-18);
    }

    #[test]
    fn max_loss_rejects_unreachable_threshold() {
        let link = LinkModel::reference_spp(0.014, 0.07).unwrap();
        let g0 = gain_at(&link).unwrap().per_pulse;
        assert!(matches!(
            max_tolerable_loss(&link, g0 * 2.0),
            Err(Error::BelowThreshold { .. })
        ));
    }

    #[test]
    fn zero_width_sweep_gives_identical_samples() {
        let link = LinkModel::reference_wcp(0.1).unwrap();
        let curve = sweep_curve(&link, Abscissa::LossDb, (5.0, 5.0), 2).unwrap();
        assert_eq!(curve.samples.len(), 2);
        assert_eq!(curve.samples[0], curve.samples[1]);
        assert!(sweep_curve(&link, Abscissa::LossDb, (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn csv_has_header_and_twelve_digits() {
        let link = LinkModel::reference_wcp(0.1).unwrap();
        let csv = sweep_curve(&link, Abscissa::Mu, (0.01, 0.2), 3).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "mu,G");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').next().unwrap(), "1.00000000000e-2");
        assert!(csv.starts_with("# source = wcp\n"));
    }
}

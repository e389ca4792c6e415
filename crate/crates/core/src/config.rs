//! Run configuration.
//!
//! One `section.key = value` assignment per line; `#` starts a comment.
//! Every key has a default, so an empty file is a complete configuration.
//! Unknown keys, repeated keys and unparsable values are errors that carry
//! the line number.
//!
//! Bob's APD efficiency defaults to the 0.6 quoted for the control APDs at
//! Alice's station; no separate figure exists for Bob's detectors.

use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::PaMode;
use crate::error::{Error, Result};
use crate::hbt::HbtSimConfig;
use crate::optics::{
    AliceConfig, BitGenerator, BobConfig, ChannelConfig, DarkRates, DoubleClickPolicy, OpticsChain,
    DEFAULT_RECEIVER_TRANSMITTANCE,
};
use crate::protocol::{QberMode, SessionParams, SessionSetup};
use crate::security::{Abscissa, LinkModel, SmConvention, WCP_GATE_NS};
use crate::source::{SourceKind, SourceModel, NV_LIFETIME_NS, PULSE_PERIOD_NS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    Session,
    Sweep,
    MaxLoss,
    Hbt,
    EvalG,
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "session" => ExperimentKind::Session,
            "sweep" => ExperimentKind::Sweep,
            "maxloss" => ExperimentKind::MaxLoss,
            "hbt" => ExperimentKind::Hbt,
            "evalg" => ExperimentKind::EvalG,
            other => return Err(format!("unknown experiment `{other}`")),
        })
    }
}

impl Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExperimentKind::Session => "session",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::MaxLoss => "maxloss",
            ExperimentKind::Hbt => "hbt",
            ExperimentKind::EvalG => "evalg",
        })
    }
}

impl FromStr for SmConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "formula" {
            return Ok(SmConvention::Formula);
        }
        let v: f64 = s.parse().map_err(|_| format!("expected `formula` or a probability, got `{s}`"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("s_m must lie in [0, 1], got {v}"));
        }
        Ok(SmConvention::Explicit(v))
    }
}

impl Display for SmConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmConvention::Formula => f.write_str("formula"),
            SmConvention::Explicit(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSection {
    pub kind: SourceKind,
    /// Mean photon number at Alice's output.
    pub mu: f64,
    pub suppression_c: f64,
    pub lifetime_ns: f64,
    pub pulse_period_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AliceSection {
    pub t_eom: f64,
    pub bit_generator: BitGenerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSection {
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BobSection {
    pub apd_efficiency: f64,
    pub receiver_transmittance: f64,
    pub dark_h_hz: f64,
    pub dark_v_hz: f64,
    pub dark_l_hz: f64,
    pub dark_r_hz: f64,
    pub gate_width_ns: f64,
    pub pol_error_hv: f64,
    pub pol_error_lr: f64,
    pub dynamic_error: f64,
    /// When set, `dynamic_error` is solved so the predicted QBER equals it.
    pub target_qber: Option<f64>,
    pub double_click_policy: DoubleClickPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSection {
    pub batch_slots: u64,
    pub batches: u64,
    pub qber_mode: QberMode,
    pub qber_prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSection {
    pub f_e: f64,
    pub pa_mode: PaMode,
    pub cascade_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecuritySection {
    pub s_m: SmConvention,
    pub wcp_gate_ns: f64,
    pub g_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub x: Abscissa,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbtSection {
    /// Mean photon number per pulse before collection losses.
    pub mu: f64,
    pub efficiency: f64,
    pub background_hz: f64,
    pub duration_s: f64,
    pub bin_width_ns: f64,
    /// Half-width of the delay axis; `2·range_ns` must be a whole number of
    /// bins.
    pub range_ns: f64,
    /// Timestamp file to analyse instead of simulating; empty to simulate.
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub source: SourceSection,
    pub alice: AliceSection,
    pub channel: ChannelSection,
    pub bob: BobSection,
    pub protocol: ProtocolSection,
    pub distill: DistillSection,
    pub security: SecuritySection,
    pub sweep: SweepSection,
    pub hbt: HbtSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bob = BobConfig::default();
        let [h, v, l, r] = bob.dark_rates_hz.0;
        Self {
            kind: ExperimentKind::Session,
            seed: 1,
            source: SourceSection {
                kind: SourceKind::Spp,
                mu: 0.014,
                suppression_c: 0.07,
                lifetime_ns: NV_LIFETIME_NS,
                pulse_period_ns: PULSE_PERIOD_NS,
            },
            alice: AliceSection {
                t_eom: 0.65,
                bit_generator: BitGenerator::Lfsr,
            },
            channel: ChannelSection { loss_db: 0.0 },
            bob: BobSection {
                apd_efficiency: bob.apd_efficiency,
                receiver_transmittance: DEFAULT_RECEIVER_TRANSMITTANCE,
                dark_h_hz: h,
                dark_v_hz: v,
                dark_l_hz: l,
                dark_r_hz: r,
                gate_width_ns: bob.gate_width_ns,
                pol_error_hv: bob.pol_error_hv,
                pol_error_lr: bob.pol_error_lr,
                dynamic_error: 0.0,
                target_qber: None,
                double_click_policy: DoubleClickPolicy::Discard,
            },
            protocol: ProtocolSection {
                batch_slots: 53_000,
                batches: 1,
                qber_mode: QberMode::Reconciled,
                qber_prior: 0.05,
            },
            distill: DistillSection {
                f_e: 1.0,
                pa_mode: PaMode::Formula,
                cascade_passes: crate::distill::cascade::DEFAULT_PASSES,
            },
            security: SecuritySection {
                s_m: SmConvention::Formula,
                wcp_gate_ns: WCP_GATE_NS,
                g_threshold: 1e-6,
            },
            sweep: SweepSection {
                x: Abscissa::LossDb,
                from: 0.0,
                to: 20.0,
                steps: 201,
            },
            hbt: HbtSection {
                mu: 0.022,
                efficiency: 0.6,
                background_hz: 0.0,
                duration_s: 166.0,
                bin_width_ns: 1.0,
                range_ns: 657.0,
                input: String::new(),
            },
        }
    }
}

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_opt(value: &str) -> std::result::Result<Option<f64>, String> {
    if value == "none" {
        Ok(None)
    } else {
        parse::<f64>(value).map(Some)
    }
}

fn show_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

/// Visits every key with its current value, or assigns one key.
macro_rules! fields {
    ($cfg:ident, $visit:ident) => {
        $visit!("run.kind", $cfg.kind);
        $visit!("run.seed", $cfg.seed);
        $visit!("source.kind", $cfg.source.kind);
        $visit!("source.mu", $cfg.source.mu);
        $visit!("source.suppression_c", $cfg.source.suppression_c);
        $visit!("source.lifetime_ns", $cfg.source.lifetime_ns);
        $visit!("source.pulse_period_ns", $cfg.source.pulse_period_ns);
        $visit!("alice.t_eom", $cfg.alice.t_eom);
        $visit!("alice.bit_generator", $cfg.alice.bit_generator);
        $visit!("channel.loss_db", $cfg.channel.loss_db);
        $visit!("bob.apd_efficiency", $cfg.bob.apd_efficiency);
        $visit!("bob.receiver_transmittance", $cfg.bob.receiver_transmittance);
        $visit!("bob.dark_h_hz", $cfg.bob.dark_h_hz);
        $visit!("bob.dark_v_hz", $cfg.bob.dark_v_hz);
        $visit!("bob.dark_l_hz", $cfg.bob.dark_l_hz);
        $visit!("bob.dark_r_hz", $cfg.bob.dark_r_hz);
        $visit!("bob.gate_width_ns", $cfg.bob.gate_width_ns);
        $visit!("bob.pol_error_hv", $cfg.bob.pol_error_hv);
        $visit!("bob.pol_error_lr", $cfg.bob.pol_error_lr);
        $visit!("bob.dynamic_error", $cfg.bob.dynamic_error);
        $visit!(opt "bob.target_qber", $cfg.bob.target_qber);
        $visit!("bob.double_click_policy", $cfg.bob.double_click_policy);
        $visit!("protocol.batch_slots", $cfg.protocol.batch_slots);
        $visit!("protocol.batches", $cfg.protocol.batches);
        $visit!("protocol.qber_mode", $cfg.protocol.qber_mode);
        $visit!("protocol.qber_prior", $cfg.protocol.qber_prior);
        $visit!("distill.f_e", $cfg.distill.f_e);
        $visit!("distill.pa_mode", $cfg.distill.pa_mode);
        $visit!("distill.cascade_passes", $cfg.distill.cascade_passes);
        $visit!("security.s_m", $cfg.security.s_m);
        $visit!("security.wcp_gate_ns", $cfg.security.wcp_gate_ns);
        $visit!("security.g_threshold", $cfg.security.g_threshold);
        $visit!("sweep.x", $cfg.sweep.x);
        $visit!("sweep.from", $cfg.sweep.from);
        $visit!("sweep.to", $cfg.sweep.to);
        $visit!("sweep.steps", $cfg.sweep.steps);
        $visit!("hbt.mu", $cfg.hbt.mu);
        $visit!("hbt.efficiency", $cfg.hbt.efficiency);
        $visit!("hbt.background_hz", $cfg.hbt.background_hz);
        $visit!("hbt.duration_s", $cfg.hbt.duration_s);
        $visit!("hbt.bin_width_ns", $cfg.hbt.bin_width_ns);
        $visit!("hbt.range_ns", $cfg.hbt.range_ns);
        $visit!("hbt.input", $cfg.hbt.input);
    };
}

impl RunConfig {
    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Assigns one key; the error text names the key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let cfg = self;
        macro_rules! assign {
            (opt $k:literal, $f:expr) => {
                if key == $k {
                    $f = parse_opt(value).map_err(|e| format!("{key}: {e}"))?;
                    return Ok(());
                }
            };
            ($k:literal, $f:expr) => {
                if key == $k {
                    $f = parse(value).map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))?;
                    return Ok(());
                }
            };
        }
        fields!(cfg, assign);
        Err(format!("unknown key `{key}`"))
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let cfg = self;
        let mut out = Vec::new();
        macro_rules! dump {
            (opt $k:literal, $f:expr) => {
                out.push(($k, show_opt($f)))
            };
            ($k:literal, $f:expr) => {
                out.push(($k, $f.to_string()))
            };
        }
        fields!(cfg, dump);
        out
    }

    /// Effective configuration in the input format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// SHA-256 of [`Self::to_text`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Applies a `key=value` override given outside a file.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            message: format!("override `{assignment}` is not key=value"),
        })?;
        self.set(key.trim(), value.trim())
            .map_err(|message| Error::Config { line: 0, message })
    }

    pub fn output_source(&self) -> Result<SourceModel> {
        let s = &self.source;
        SourceModel::new(s.kind, s.mu, s.suppression_c, s.lifetime_ns, s.pulse_period_ns)
    }

    pub fn bob_config(&self) -> BobConfig {
        let b = &self.bob;
        BobConfig {
            apd_efficiency: b.apd_efficiency,
            receiver_transmittance: b.receiver_transmittance,
            dark_rates_hz: self.dark_rates(),
            gate_width_ns: b.gate_width_ns,
            pol_error_hv: b.pol_error_hv,
            pol_error_lr: b.pol_error_lr,
            dynamic_error: b.dynamic_error,
            double_click_policy: b.double_click_policy,
        }
    }

    pub fn dark_rates(&self) -> DarkRates {
        let b = &self.bob;
        DarkRates([b.dark_h_hz, b.dark_v_hz, b.dark_l_hz, b.dark_r_hz])
    }

    /// The Monte Carlo chain; resolves `bob.target_qber` into a dynamic
    /// error when set.
    pub fn optics_chain(&self) -> Result<OpticsChain> {
        let alice = AliceConfig::from_output_source(self.alice.t_eom, self.output_source()?)?;
        let mut chain = OpticsChain::new(alice, ChannelConfig::new(self.channel.loss_db)?, self.bob_config())?;
        if let Some(target) = self.bob.target_qber {
            chain.bob.dynamic_error = 0.0;
            chain.bob.dynamic_error = chain.dynamic_error_for_qber(target)?;
        }
        Ok(chain)
    }

    pub fn multiphoton_probability(&self) -> Result<f64> {
        Ok(match self.security.s_m {
            SmConvention::Formula => self.output_source()?.multiphoton_probability(),
            SmConvention::Explicit(s) => s,
        })
    }

    pub fn session_setup(&self) -> Result<SessionSetup> {
        if self.protocol.batch_slots == 0 {
            return Err(Error::invalid("protocol.batch_slots", "must be > 0"));
        }
        if !(self.protocol.qber_prior > 0.0 && self.protocol.qber_prior < 0.11) {
            return Err(Error::invalid("protocol.qber_prior", "must lie in (0, 0.11)"));
        }
        let chain = self.optics_chain()?;
        Ok(SessionSetup {
            chain,
            bit_generator: self.alice.bit_generator,
            n_slots: self.protocol.batch_slots,
            params: SessionParams {
                session_id: 0,
                seed: self.seed,
                qber_mode: self.protocol.qber_mode,
                qber_prior: self.protocol.qber_prior,
                cascade_passes: self.distill.cascade_passes,
                pa_mode: self.distill.pa_mode,
                f_e: self.distill.f_e,
                s_m: self.multiphoton_probability()?,
                pulse_rate_hz: 1e9 / self.source.pulse_period_ns,
            },
        })
    }

    /// Analytic link for curves: same receiver, misalignment equal to the
    /// mean basis error (including any dynamic error).
    pub fn link_model(&self) -> Result<LinkModel> {
        let bob = self.optics_chain()?.bob;
        let efficiency = bob.detection_efficiency();
        let misalignment = bob.mean_basis_error();
        let s = &self.source;
        let link = match s.kind {
            SourceKind::Spp => LinkModel::spp(
                s.mu,
                s.suppression_c,
                efficiency,
                self.dark_rates(),
                misalignment,
                self.bob.gate_width_ns,
                s.lifetime_ns,
                s.pulse_period_ns,
            )?,
            SourceKind::Wcp => LinkModel::wcp(
                s.mu,
                efficiency,
                self.dark_rates(),
                misalignment,
                self.security.wcp_gate_ns,
                s.pulse_period_ns,
            )?,
        };
        link.with_loss(self.channel.loss_db)?
            .with_f(self.distill.f_e)?
            .with_s_m(self.security.s_m)
    }

    pub fn hbt_sim(&self) -> Result<HbtSimConfig> {
        let s = &self.source;
        let source = SourceModel::new(s.kind, self.hbt.mu, s.suppression_c, s.lifetime_ns, s.pulse_period_ns)?;
        Ok(HbtSimConfig {
            source,
            efficiency: self.hbt.efficiency,
            split: 0.5,
            background_hz: self.hbt.background_hz,
            duration_s: self.hbt.duration_s,
        })
    }
}

/// Parses a configuration file.
pub fn load_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `section.key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        cfg.set(key, value).map_err(|message| Error::Config { line, message })?;
    }
    Ok(cfg)
}

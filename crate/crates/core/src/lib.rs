//! Pulse-level BB84 simulator and secure-rate engine.
//!
//! The crate models a polarization-encoded BB84 link fed either by a
//! single-photon source (sub-Poissonian, two-photon events suppressed by the
//! zero-delay correlation `C`) or by weak coherent pulses. It covers the
//! whole chain:
//!
//! * [`source`]: photon-number and emission-time laws,
//! * [`optics`]: Alice's encoder, the lossy channel and Bob's passive
//!   four-detector receiver with dark counts and time gating,
//! * [`transport`]: the framed public classical channel,
//! * [`protocol`]: the two station state machines (sifting, QBER estimation),
//! * [`distill`]: CASCADE reconciliation and Toeplitz privacy amplification,
//! * [`security`]: the individual-attack secure gain and loss/μ curves,
//! * [`hbt`]: Hanbury-Brown–Twiss coincidence analysis,
//! * [`config`]: the flat `section.key = value` run configuration.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod config;
pub mod distill;
pub mod error;
pub mod hbt;
pub mod optics;
pub mod protocol;
pub mod rng;
pub mod security;
pub mod source;
pub mod transport;

pub use config::{ExperimentKind, RunConfig};
pub use error::{Error, Result};
pub use optics::{
    gate_fractions, AliceConfig, Basis, BobConfig, ChannelConfig, ClickRecord, DoubleClickPolicy,
    GateFractions, Polarization,
};
pub use protocol::{QberEstimate, QberMode, SessionSummary, SiftedKey};
pub use security::{
    secure_gain, Gain, LinkModel, OperatingPoint, RateCurve, Regime, SmConvention,
};
pub use source::{EmittedPulse, SourceKind, SourceModel};

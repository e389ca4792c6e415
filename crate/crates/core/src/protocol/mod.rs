//! BB84 station state machines.
//!
//! Message flow for one session (B = Bob, A = Alice). Every request gets
//! exactly one reply, so a transcript is a deterministic function of the
//! seed:
//!
//! ```text
//! B → A  HELLO                    A → B  HELLO
//! B → A  BASIS_ANNOUNCE           A → B  SIFT_MASK
//! B → A  SAMPLE_REQUEST           A → B  SAMPLE_REVEAL      (sampled / full modes)
//! B → A  PARITY_QUERY             A → B  PARITY_REPLY       (repeated)
//! B → A  KEY_DIGEST (reconciled)  A → B  PA_SEED
//! B → A  KEY_DIGEST (final)       A → B  KEY_DIGEST (final)
//! ```
//!
//! Either side may send ABORT instead of its next message.

pub mod messages;

use std::io::{Read, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::bits;
use crate::distill::{
    amplified_length, cascade::MAX_QBER, cascade_reconcile, draw_seed, privacy_amplify, DistilledKey,
    LeakageLedger, PaMode, ParityOracle, ParityQuery, ParityResponder,
};
use crate::error::{Error, Result};
use crate::optics::{Basis, BitGenerator, BitSource, OpticsChain, Polarization};
use crate::rng::{derive_seed, substream};
use crate::security::OperatingPoint;
use crate::transport::{loopback_pair, FramedStream, Transcript};

pub use messages::{Message, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Alice,
    Bob,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Alice => 0,
            Role::Bob => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Quantum,
    Sifting,
    Sampling,
    Reconciling,
    Amplifying,
    Done,
    Aborted,
}

/// Phase tracking for one station. Phases only move forward; any phase may
/// jump to `Aborted`.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub role: Role,
    phase: Phase,
    sifted: Option<SiftedKey>,
    qber: Option<QberEstimate>,
}

impl SessionState {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            phase: Phase::Quantum,
            sifted: None,
            qber: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn advance(&mut self, next: Phase) -> Result<()> {
        if next == Phase::Aborted || (self.phase != Phase::Aborted && next > self.phase) {
            self.phase = next;
            Ok(())
        } else {
            Err(Error::Protocol(format!("illegal transition {:?} -> {next:?}", self.phase)))
        }
    }

    pub fn set_sifted(&mut self, key: SiftedKey) -> Result<()> {
        if self.phase < Phase::Sifting || self.phase == Phase::Aborted {
            return Err(Error::Protocol(format!("sifted key set in phase {:?}", self.phase)));
        }
        self.sifted = Some(key);
        Ok(())
    }

    pub fn sifted(&self) -> Option<&SiftedKey> {
        self.sifted.as_ref()
    }

    pub fn set_qber(&mut self, q: QberEstimate) {
        self.qber = Some(q);
    }

    pub fn qber(&self) -> Option<QberEstimate> {
        self.qber
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftedKey {
    pub bits: Vec<bool>,
    pub slot_indices: Vec<u64>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Drops the given (sorted, distinct) positions.
    fn remove_positions(&mut self, positions: &[u32]) {
        let mut drop = positions.iter().peekable();
        let mut i = 0usize;
        let mut keep = |_: &_| {
            let hit = drop.peek().is_some_and(|&&p| p as usize == i);
            if hit {
                drop.next();
            }
            i += 1;
            !hit
        };
        let mask: Vec<bool> = self.bits.iter().map(&mut keep).collect();
        let mut it = mask.iter();
        self.bits.retain(|_| *it.next().expect("same length"));
        let mut it = mask.iter();
        self.slot_indices.retain(|_| *it.next().expect("same length"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QberMode {
    /// Reveal the whole sifted key (characterization; no key is left).
    FullCompare,
    /// Reveal a random fraction of the sifted key and discard it.
    Sampled(f64),
    /// Reveal nothing up front; the error count comes out of CASCADE.
    Reconciled,
}

impl std::str::FromStr for QberMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(QberMode::FullCompare),
            "reconciled" => Ok(QberMode::Reconciled),
            _ => {
                let frac = s
                    .strip_prefix("sampled:")
                    .ok_or_else(|| format!("unknown qber mode `{s}` (expected full, reconciled or sampled:<fraction>)"))?;
                let f: f64 = frac.parse().map_err(|_| format!("bad sample fraction `{frac}`"))?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(format!("sample fraction must lie in (0, 1], got {f}"));
                }
                Ok(QberMode::Sampled(f))
            }
        }
    }
}

impl std::fmt::Display for QberMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QberMode::FullCompare => f.write_str("full"),
            QberMode::Sampled(x) => write!(f, "sampled:{x}"),
            QberMode::Reconciled => f.write_str("reconciled"),
        }
    }
}

/// Normal quantile for a 95 % interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberEstimate {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub errors: u64,
    pub compared: u64,
}

impl QberEstimate {
    /// Wilson score interval; with nothing compared the interval is [0, 1].
    pub fn wilson(errors: u64, compared: u64, z: f64) -> Self {
        if compared == 0 {
            return Self {
                value: 0.0,
                lower: 0.0,
                upper: 1.0,
                errors,
                compared,
            };
        }
        let n = compared as f64;
        let p = errors as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            value: p,
            lower: (centre - half).max(0.0),
            upper: (centre + half).min(1.0),
            errors,
            compared,
        }
    }
}

/// One accepted slot on Bob's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BobDetection {
    pub slot: u64,
    pub basis: Basis,
    pub bit: bool,
}

/// Both stations' logs after the quantum phase.
#[derive(Debug, Clone, Default)]
pub struct QuantumRecords {
    /// Alice's state for every slot.
    pub alice: Vec<Polarization>,
    /// Bob's slots with exactly one accepted gated click.
    pub bob: Vec<BobDetection>,
}

impl QuantumRecords {
    pub fn n_slots(&self) -> u64 {
        self.alice.len() as u64
    }
}

pub fn run_quantum_phase<B: BitSource + ?Sized>(
    chain: &OpticsChain,
    bits: &mut B,
    n_slots: u64,
    seed: u64,
) -> QuantumRecords {
    let mut records = QuantumRecords {
        alice: Vec::with_capacity(n_slots as usize),
        bob: Vec::new(),
    };
    for outcome in chain.run(bits, n_slots, seed) {
        records.alice.push(outcome.sent);
        if let Some(p) = outcome.record.accepted {
            records.bob.push(BobDetection {
                slot: outcome.record.slot_index,
                basis: p.basis(),
                bit: p.bit(),
            });
        }
    }
    records
}

/// Parameters both stations agree on before the session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub session_id: u64,
    /// Root of the stations' private random streams.
    pub seed: u64,
    pub qber_mode: QberMode,
    /// First-pass block sizing when no sample estimate exists.
    pub qber_prior: f64,
    pub cascade_passes: usize,
    pub pa_mode: PaMode,
    pub f_e: f64,
    /// Multiphoton probability at Alice's output.
    pub s_m: f64,
    pub pulse_rate_hz: f64,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            session_id: 0,
            seed: 0,
            qber_mode: QberMode::Reconciled,
            qber_prior: 0.05,
            cascade_passes: crate::distill::cascade::DEFAULT_PASSES,
            pa_mode: PaMode::Formula,
            f_e: 1.0,
            s_m: 0.07 * 0.014 * 0.014 / 2.0,
            pulse_rate_hz: 1e9 / crate::source::PULSE_PERIOD_NS,
        }
    }
}

/// Smallest QBER used to size CASCADE blocks.
const MIN_BLOCK_QBER: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub role: Role,
    pub session_id: u64,
    pub slots: u64,
    pub accepted: u64,
    pub sifted: u64,
    pub qber: QberEstimate,
    pub qber_mode: String,
    pub leakage: LeakageLedger,
    pub reconciled_bits: u64,
    pub corrected_bits: u64,
    pub final_bits: u64,
    /// Final bits per emitted pulse.
    #[serde(rename = "G_empirical")]
    pub g_empirical: f64,
    pub p_exp: f64,
    pub digest: String,
}

impl SessionSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub summary: SessionSummary,
    pub key: DistilledKey,
    pub sifted: SiftedKey,
}

/// Typed view of a framed stream bound to one session id.
struct Link<'a, S> {
    stream: &'a mut FramedStream<S>,
    session_id: u64,
}

impl<S: Read + Write> Link<'_, S> {
    fn send(&mut self, m: &Message) -> Result<()> {
        self.stream.send(&m.to_frame(self.session_id))
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = self.stream.recv()?;
        if frame.session_id != self.session_id {
            return Err(Error::Protocol(format!(
                "frame for session {} on session {}",
                frame.session_id, self.session_id
            )));
        }
        match Message::from_frame(&frame)? {
            Message::Abort(reason) => Err(Error::Aborted(reason)),
            m => Ok(m),
        }
    }

    /// Runs `body`, telling the peer about any locally detected failure.
    fn guarded<T>(&mut self, body: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let out = body(self);
        if let Err(e) = &out {
            if !matches!(e, Error::Aborted(_) | Error::Io(_)) {
                let _ = self.send(&Message::Abort(e.to_string()));
            }
        }
        out
    }
}

fn unexpected(m: &Message, wanted: &str) -> Error {
    Error::Protocol(format!("expected {wanted}, got {:?}", m.msg_type()))
}

/// Bob's CASCADE oracle: each query is one PARITY_QUERY / PARITY_REPLY pair.
struct RemoteOracle<'l, 'a, S> {
    link: &'l mut Link<'a, S>,
}

impl<S: Read + Write> ParityOracle for RemoteOracle<'_, '_, S> {
    fn parity(&mut self, query: ParityQuery) -> Result<bool> {
        self.link.send(&Message::ParityQuery(query))?;
        match self.link.recv()? {
            Message::ParityReply(bit) => Ok(bit),
            other => Err(unexpected(&other, "PARITY_REPLY")),
        }
    }
}

fn cascade_seed(session_id: u64) -> u64 {
    derive_seed(session_id, "cascade")
}

/// Final-key length both sides can evaluate from public data.
fn secure_length(n: usize, accepted: u64, slots: u64, e: f64, params: &SessionParams, ledger: &mut LeakageLedger) -> usize {
    if n == 0 || accepted == 0 || slots == 0 {
        return 0;
    }
    let p_exp = accepted as f64 / slots as f64;
    ledger.multiphoton_fraction = params.s_m / p_exp;
    match OperatingPoint::new(p_exp, params.s_m.min(1.0), e.min(0.5), params.f_e, params.pulse_rate_hz) {
        Ok(op) => amplified_length(n, &op, params.pa_mode, ledger),
        Err(_) => 0,
    }
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    role: Role,
    params: &SessionParams,
    slots: u64,
    accepted: u64,
    sifted: u64,
    qber: QberEstimate,
    ledger: LeakageLedger,
    reconciled_bits: u64,
    corrected_bits: u64,
    key: &DistilledKey,
) -> SessionSummary {
    SessionSummary {
        role,
        session_id: params.session_id,
        slots,
        accepted,
        sifted,
        qber,
        qber_mode: params.qber_mode.to_string(),
        leakage: ledger,
        reconciled_bits,
        corrected_bits,
        final_bits: key.len() as u64,
        g_empirical: if slots == 0 { 0.0 } else { key.len() as f64 / slots as f64 },
        p_exp: if slots == 0 { 0.0 } else { accepted as f64 / slots as f64 },
        digest: key.digest_hex(),
    }
}

/// Alice's station: answers every request from her slot log.
pub fn run_alice<S: Read + Write>(
    stream: &mut FramedStream<S>,
    params: &SessionParams,
    log: &[Polarization],
) -> Result<SessionOutcome> {
    let mut link = Link {
        stream,
        session_id: params.session_id,
    };
    link.guarded(|link| alice_session(link, params, log))
}

fn alice_session<S: Read + Write>(
    link: &mut Link<'_, S>,
    params: &SessionParams,
    log: &[Polarization],
) -> Result<SessionOutcome> {
    let mut state = SessionState::new(Role::Alice);
    let slots = log.len() as u64;

    match link.recv()? {
        Message::Hello { version, role, n_slots } => {
            if version != PROTOCOL_VERSION || role != Role::Bob.code() || n_slots != slots {
                return Err(Error::Protocol(format!(
                    "hello mismatch: version {version}, role {role}, {n_slots} slots (have {slots})"
                )));
            }
        }
        other => return Err(unexpected(&other, "HELLO")),
    }
    link.send(&Message::Hello {
        version: PROTOCOL_VERSION,
        role: Role::Alice.code(),
        n_slots: slots,
    })?;

    state.advance(Phase::Sifting)?;
    let entries = match link.recv()? {
        Message::BasisAnnounce(entries) => entries,
        other => return Err(unexpected(&other, "BASIS_ANNOUNCE")),
    };
    let mut last = None;
    for &(slot, _) in &entries {
        if slot >= slots || last.is_some_and(|l| slot <= l) {
            return Err(Error::Protocol(format!("announced slot {slot} out of order or range")));
        }
        last = Some(slot);
    }
    let mask: Vec<bool> = entries.iter().map(|&(s, b)| log[s as usize].basis() == b).collect();
    let mut sifted = SiftedKey::default();
    for (&(slot, _), _) in entries.iter().zip(&mask).filter(|(_, &keep)| keep) {
        sifted.bits.push(log[slot as usize].bit());
        sifted.slot_indices.push(slot);
    }
    link.send(&Message::SiftMask(mask))?;
    let accepted = entries.len() as u64;
    let sifted_len = sifted.len() as u64;
    state.set_sifted(sifted.clone())?;

    let mut ledger = LeakageLedger {
        f_e_used: params.f_e,
        ..LeakageLedger::default()
    };
    let mut estimate = None;
    let mut msg = link.recv()?;
    if let Message::SampleRequest { positions, bob_bits } = &msg {
        state.advance(Phase::Sampling)?;
        check_positions(positions, sifted.len())?;
        let reveal: Vec<bool> = positions.iter().map(|&p| sifted.bits[p as usize]).collect();
        let errors = bits::hamming_distance(&reveal, bob_bits) as u64;
        estimate = Some(QberEstimate::wilson(errors, positions.len() as u64, Z_95));
        ledger.record_sampled(positions.len() as u64);
        sifted.remove_positions(positions);
        link.send(&Message::SampleReveal(reveal))?;
        msg = link.recv()?;
    }

    state.advance(Phase::Reconciling)?;
    let mut responder = ParityResponder::new(sifted.bits.clone(), cascade_seed(params.session_id));
    let (digest, corrected) = loop {
        match msg {
            Message::ParityQuery(q) => {
                let bit = responder.answer(q)?;
                link.send(&Message::ParityReply(bit))?;
                msg = link.recv()?;
            }
            Message::KeyDigest { digest, count } => break (digest, count),
            other => return Err(unexpected(&other, "PARITY_QUERY or KEY_DIGEST")),
        }
    };
    ledger.record_parities(responder.answered());
    let key = responder.into_key();
    if digest != bits::digest(&key) {
        return Err(Error::Protocol("reconciled keys differ".into()));
    }

    state.advance(Phase::Amplifying)?;
    let n = key.len();
    let qber = estimate.unwrap_or_else(|| QberEstimate::wilson(u64::from(corrected), n as u64, Z_95));
    state.set_qber(qber);
    let m = secure_length(n, accepted, slots, qber.value, params, &mut ledger);
    let seed = draw_seed(n, m, &mut substream(params.seed, "alice/pa_seed"));
    let distilled = privacy_amplify(&key, &seed)?;
    link.send(&Message::PaSeed(seed))?;

    match link.recv()? {
        Message::KeyDigest { digest, count } => {
            if digest != distilled.digest || count as usize != distilled.len() {
                return Err(Error::Protocol("final key digests differ".into()));
            }
        }
        other => return Err(unexpected(&other, "KEY_DIGEST")),
    }
    link.send(&Message::KeyDigest {
        digest: distilled.digest,
        count: distilled.len() as u32,
    })?;
    state.advance(Phase::Done)?;

    Ok(SessionOutcome {
        summary: summarize(
            Role::Alice,
            params,
            slots,
            accepted,
            sifted_len,
            qber,
            ledger,
            n as u64,
            u64::from(corrected),
            &distilled,
        ),
        key: distilled,
        sifted,
    })
}

fn check_positions(positions: &[u32], n: usize) -> Result<()> {
    if positions.len() > n {
        return Err(Error::Protocol(format!("sample of {} from {n} bits", positions.len())));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) || positions.last().is_some_and(|&p| p as usize >= n) {
        return Err(Error::Protocol("sample positions not sorted, distinct and in range".into()));
    }
    Ok(())
}

/// Bob's station: drives sifting, estimation and CASCADE.
pub fn run_bob<S: Read + Write>(
    stream: &mut FramedStream<S>,
    params: &SessionParams,
    n_slots: u64,
    detections: &[BobDetection],
) -> Result<SessionOutcome> {
    let mut link = Link {
        stream,
        session_id: params.session_id,
    };
    link.guarded(|link| bob_session(link, params, n_slots, detections))
}

fn bob_session<S: Read + Write>(
    link: &mut Link<'_, S>,
    params: &SessionParams,
    slots: u64,
    detections: &[BobDetection],
) -> Result<SessionOutcome> {
    let mut state = SessionState::new(Role::Bob);
    link.send(&Message::Hello {
        version: PROTOCOL_VERSION,
        role: Role::Bob.code(),
        n_slots: slots,
    })?;
    match link.recv()? {
        Message::Hello { version, role, n_slots } => {
            if version != PROTOCOL_VERSION || role != Role::Alice.code() || n_slots != slots {
                return Err(Error::Protocol("hello mismatch".into()));
            }
        }
        other => return Err(unexpected(&other, "HELLO")),
    }

    state.advance(Phase::Sifting)?;
    link.send(&Message::BasisAnnounce(detections.iter().map(|d| (d.slot, d.basis)).collect()))?;
    let mask = match link.recv()? {
        Message::SiftMask(mask) => mask,
        other => return Err(unexpected(&other, "SIFT_MASK")),
    };
    if mask.len() != detections.len() {
        return Err(Error::Protocol(format!(
            "sift mask has {} entries for {} announced slots",
            mask.len(),
            detections.len()
        )));
    }
    let mut sifted = SiftedKey::default();
    for d in detections.iter().zip(&mask).filter(|(_, &keep)| keep).map(|(d, _)| d) {
        sifted.bits.push(d.bit);
        sifted.slot_indices.push(d.slot);
    }
    let accepted = detections.len() as u64;
    let sifted_len = sifted.len() as u64;
    state.set_sifted(sifted.clone())?;

    let mut ledger = LeakageLedger {
        f_e_used: params.f_e,
        ..LeakageLedger::default()
    };
    let n = sifted.len();
    let sample_size = match params.qber_mode {
        QberMode::FullCompare => n,
        QberMode::Sampled(f) => ((f * n as f64).round() as usize).min(n),
        QberMode::Reconciled => 0,
    };
    let mut estimate = None;
    if sample_size > 0 {
        state.advance(Phase::Sampling)?;
        let mut rng = substream(params.seed, "bob/sample");
        let mut positions: Vec<u32> = index::sample(&mut rng, n, sample_size)
            .into_iter()
            .map(|p| p as u32)
            .collect();
        positions.sort_unstable();
        let bob_bits: Vec<bool> = positions.iter().map(|&p| sifted.bits[p as usize]).collect();
        link.send(&Message::SampleRequest {
            positions: positions.clone(),
            bob_bits: bob_bits.clone(),
        })?;
        let reveal = match link.recv()? {
            Message::SampleReveal(bits) => bits,
            other => return Err(unexpected(&other, "SAMPLE_REVEAL")),
        };
        if reveal.len() != positions.len() {
            return Err(Error::Protocol("sample reveal length mismatch".into()));
        }
        let errors = bits::hamming_distance(&reveal, &bob_bits) as u64;
        estimate = Some(QberEstimate::wilson(errors, sample_size as u64, Z_95));
        ledger.record_sampled(sample_size as u64);
        sifted.remove_positions(&positions);
    }

    state.advance(Phase::Reconciling)?;
    let block_qber = estimate.map_or(params.qber_prior, |q| q.value).max(MIN_BLOCK_QBER);
    if block_qber >= MAX_QBER {
        return Err(Error::QberTooHigh(block_qber));
    }
    let mut key = sifted.bits.clone();
    let mut corrected = 0u64;
    if !key.is_empty() {
        let mut oracle = RemoteOracle { link: &mut *link };
        let report = cascade_reconcile(
            &mut key,
            block_qber,
            params.cascade_passes,
            cascade_seed(params.session_id),
            &mut oracle,
        )?;
        ledger.record_parities(report.parity_bits);
        corrected = report.corrected.len() as u64;
    }
    link.send(&Message::KeyDigest {
        digest: bits::digest(&key),
        count: corrected as u32,
    })?;

    state.advance(Phase::Amplifying)?;
    let qber = estimate.unwrap_or_else(|| QberEstimate::wilson(corrected, key.len() as u64, Z_95));
    state.set_qber(qber);
    let seed = match link.recv()? {
        Message::PaSeed(seed) => seed,
        other => return Err(unexpected(&other, "PA_SEED")),
    };
    // mirrors Alice's computation so the ledger fields agree
    let m = secure_length(key.len(), accepted, slots, qber.value, params, &mut ledger);
    let distilled = privacy_amplify(&key, &seed)?;
    if distilled.len() != m {
        return Err(Error::Protocol(format!("PA seed implies {} bits, expected {m}", distilled.len())));
    }
    link.send(&Message::KeyDigest {
        digest: distilled.digest,
        count: distilled.len() as u32,
    })?;
    match link.recv()? {
        Message::KeyDigest { digest, count } => {
            if digest != distilled.digest || count as usize != distilled.len() {
                return Err(Error::Protocol("final key digests differ".into()));
            }
        }
        other => return Err(unexpected(&other, "KEY_DIGEST")),
    }
    state.advance(Phase::Done)?;

    Ok(SessionOutcome {
        summary: summarize(
            Role::Bob,
            params,
            slots,
            accepted,
            sifted_len,
            qber,
            ledger,
            key.len() as u64,
            corrected,
            &distilled,
        ),
        key: distilled,
        sifted,
    })
}

#[derive(Debug, Clone)]
pub struct LoopbackOutcome {
    pub alice: SessionOutcome,
    pub bob: SessionOutcome,
    pub transcript: Transcript,
}

/// Runs both stations on an in-process pipe, Alice on a worker thread.
pub fn run_loopback(params: &SessionParams, records: &QuantumRecords) -> Result<LoopbackOutcome> {
    let transcript = Transcript::new();
    let (a, b) = loopback_pair();
    let (alice, bob) = std::thread::scope(|scope| {
        let t = transcript.clone();
        let alice = scope.spawn(move || {
            let mut stream = FramedStream::new(a).with_transcript(t);
            run_alice(&mut stream, params, &records.alice)
        });
        let bob = {
            let mut stream = FramedStream::new(b).with_transcript(transcript.clone());
            run_bob(&mut stream, params, records.n_slots(), &records.bob)
        };
        (alice.join().expect("alice thread panicked"), bob)
    });
    match (alice, bob) {
        (Ok(alice), Ok(bob)) => Ok(LoopbackOutcome { alice, bob, transcript }),
        // report whichever side detected the problem
        (Err(e), Err(Error::Aborted(_))) => Err(e),
        (_, Err(e)) | (Err(e), Ok(_)) => Err(e),
    }
}

/// Everything needed to simulate one batch end to end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSetup {
    pub chain: OpticsChain,
    pub bit_generator: BitGenerator,
    pub n_slots: u64,
    pub params: SessionParams,
}

/// Optics, then both stations over loopback. All randomness derives from
/// `seed`; the session id is public and derived from it too.
pub fn simulate_session(setup: &SessionSetup, seed: u64) -> Result<LoopbackOutcome> {
    let mut bits = setup.bit_generator.source(seed);
    let records = run_quantum_phase(&setup.chain, &mut *bits, setup.n_slots, seed);
    let params = SessionParams {
        seed,
        session_id: derive_seed(seed, "session"),
        ..setup.params
    };
    run_loopback(&params, &records)
}

/// Aggregate over repeated batches.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchStats {
    pub batches: u64,
    pub aborted: u64,
    pub slots: u64,
    pub accepted: u64,
    pub sifted: u64,
    pub final_bits: u64,
    /// Mean final bits per batch, aborted batches counting as zero.
    pub mean_final_bits: f64,
    /// Sifted bits per second over the batches that completed.
    pub sifted_rate_hz: f64,
    /// Errors over reconciled or compared bits, pooled across batches.
    pub pooled_qber: f64,
}

/// Runs `n` batches with seeds `derive_seed(seed, "batch{i}")`.
pub fn run_batches(
    setup: &SessionSetup,
    seed: u64,
    n: u64,
) -> (Vec<std::result::Result<SessionSummary, String>>, BatchStats) {
    let mut results = Vec::with_capacity(n as usize);
    let mut stats = BatchStats {
        batches: n,
        ..BatchStats::default()
    };
    let (mut errors, mut compared, mut ok_slots) = (0u64, 0u64, 0u64);
    for i in 0..n {
        let batch_seed = derive_seed(seed, &format!("batch{i}"));
        stats.slots += setup.n_slots;
        match simulate_session(setup, batch_seed) {
            Ok(out) => {
                let s = out.bob.summary;
                ok_slots += s.slots;
                stats.accepted += s.accepted;
                stats.sifted += s.sifted;
                stats.final_bits += s.final_bits;
                errors += s.qber.errors;
                compared += s.qber.compared;
                results.push(Ok(s));
            }
            Err(e) => {
                stats.aborted += 1;
                results.push(Err(e.to_string()));
            }
        }
    }
    if n > 0 {
        stats.mean_final_bits = stats.final_bits as f64 / n as f64;
    }
    if ok_slots > 0 {
        stats.sifted_rate_hz = stats.sifted as f64 / ok_slots as f64 * setup.params.pulse_rate_hz;
    }
    if compared > 0 {
        stats.pooled_qber = errors as f64 / compared as f64;
    }
    (results, stats)
}

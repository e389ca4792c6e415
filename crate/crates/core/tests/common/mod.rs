//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use bb84_core::distill::ParityQuery;
use bb84_core::optics::Basis;
use bb84_core::protocol::{simulate_session, Message};
use bb84_core::transport::{Frame, MessageType};
use bb84_core::RunConfig;
use proptest::prelude::*;

pub const GOLDEN_SEED: u64 = 20_240_101;

pub fn message_type() -> impl Strategy<Value = MessageType> {
    prop_oneof![
        Just(MessageType::Hello),
        Just(MessageType::BasisAnnounce),
        Just(MessageType::SiftMask),
        Just(MessageType::SampleRequest),
        Just(MessageType::SampleReveal),
        Just(MessageType::ParityQuery),
        Just(MessageType::ParityReply),
        Just(MessageType::PaSeed),
        Just(MessageType::KeyDigest),
        Just(MessageType::Abort),
    ]
}

pub fn frame() -> impl Strategy<Value = Frame> {
    (message_type(), any::<u64>(), prop::collection::vec(any::<u8>(), 0..300))
        .prop_map(|(t, id, payload)| Frame::new(t, id, payload))
}

pub fn basis() -> impl Strategy<Value = Basis> {
    prop_oneof![Just(Basis::Rectilinear), Just(Basis::Circular)]
}

pub fn message() -> impl Strategy<Value = Message> {
    let bits = || prop::collection::vec(any::<bool>(), 0..200);
    prop_oneof![
        (any::<u8>(), 0u8..2, any::<u64>()).prop_map(|(version, role, n_slots)| Message::Hello { version, role, n_slots }),
        prop::collection::vec((any::<u64>(), basis()), 0..50).prop_map(Message::BasisAnnounce),
        bits().prop_map(Message::SiftMask),
        prop::collection::vec((any::<u32>(), any::<bool>()), 0..50).prop_map(|v| {
            let (positions, bob_bits) = v.into_iter().unzip();
            Message::SampleRequest { positions, bob_bits }
        }),
        bits().prop_map(Message::SampleReveal),
        (any::<u8>(), any::<u32>(), any::<u32>(), any::<u32>())
            .prop_map(|(pass, block, start, end)| Message::ParityQuery(ParityQuery { pass, block, start, end })),
        any::<bool>().prop_map(Message::ParityReply),
        bits().prop_map(Message::PaSeed),
        (any::<[u8; 32]>(), any::<u32>()).prop_map(|(digest, count)| Message::KeyDigest { digest, count }),
        ".{0,40}".prop_map(Message::Abort),
    ]
}

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_session.bin")
}

pub fn seeded_transcript() -> Vec<u8> {
    let setup = RunConfig::default().session_setup().unwrap();
    simulate_session(&setup, GOLDEN_SEED).unwrap().transcript.bytes()
}

/// Splits `bytes` at the sorted cut points.
pub fn rechunk(bytes: &[u8], mut cuts: Vec<usize>) -> Vec<&[u8]> {
    cuts.iter_mut().for_each(|c| *c %= bytes.len() + 1);
    cuts.sort_unstable();
    let mut out = Vec::new();
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(bytes.len())) {
        out.push(&bytes[prev..c]);
        prev = c;
    }
    out
}

/// Straight-line transcription of the gain formula; returns the unclamped
/// value and the magnitude of its two terms.
pub fn gain_oracle(p: f64, s: f64, e: f64, f: f64) -> (f64, f64) {
    let r = p / (p - s);
    let first = (p - s) / p * (1.0 - (1.0 + 4.0 * e * r - 4.0 * (e * r) * (e * r)).log2());
    let second = if e == 0.0 { 0.0 } else { f * (e * e.log2() + (1.0 - e) * (1.0 - e).log2()) };
    (0.5 * p * (first + second), 0.5 * p * (first.abs() + second.abs()))
}

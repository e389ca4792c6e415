use std::collections::BTreeSet;

use bb84_core::optics::{BitGenerator, OpticsChain};
use bb84_core::protocol::{
    run_batches, run_loopback, run_quantum_phase, simulate_session, BobDetection, LoopbackOutcome, Message,
    QuantumRecords, SessionParams, SessionSetup,
};
use bb84_core::transport::decode_stream;
use bb84_core::{AliceConfig, BobConfig, Polarization, QberMode, RunConfig, SourceModel};
use proptest::prelude::*;

fn reference_setup() -> SessionSetup {
    RunConfig::default().session_setup().unwrap()
}

fn with_target_qber(mode: QberMode) -> SessionSetup {
    let mut cfg = RunConfig::default();
    cfg.set("bob.target_qber", "0.046").unwrap();
    cfg.protocol.qber_mode = mode;
    cfg.session_setup().unwrap()
}

fn messages(out: &LoopbackOutcome) -> Vec<Message> {
    decode_stream(&out.transcript.bytes())
        .unwrap()
        .iter()
        .map(|f| Message::from_frame(f).unwrap())
        .collect()
}

/// Slot indices of the sifted key as seen on the wire.
fn sifted_slots_on_wire(msgs: &[Message]) -> Vec<u64> {
    let announced = msgs.iter().find_map(|m| match m {
        Message::BasisAnnounce(v) => Some(v.clone()),
        _ => None,
    });
    let mask = msgs.iter().find_map(|m| match m {
        Message::SiftMask(v) => Some(v.clone()),
        _ => None,
    });
    announced
        .unwrap()
        .iter()
        .zip(mask.unwrap())
        .filter(|(_, keep)| *keep)
        .map(|((slot, _), _)| *slot)
        .collect()
}

#[test]
fn accepted_slots_match_gated_detection_probability() {
    let setup = reference_setup();
    let (s, d) = setup.chain.expected_click_probabilities().unwrap();
    let p = s + d;
    let (_, stats) = run_batches(&setup, 3, 50);
    let n = (setup.n_slots * (stats.batches - stats.aborted)) as f64;
    let sd = (n * p * (1.0 - p)).sqrt();
    assert!((stats.accepted as f64 - n * p).abs() < 3.0 * sd, "{} vs {}", stats.accepted, n * p);
}

#[test]
fn sifted_rate_matches_half_the_gated_rate() {
    let setup = reference_setup();
    let (s, d) = setup.chain.expected_click_probabilities().unwrap();
    let rate = setup.params.pulse_rate_hz;
    let (_, stats) = run_batches(&setup, 4, 50);
    // the rate is taken over completed batches
    let slots = (setup.n_slots * (stats.batches - stats.aborted)) as f64;
    let band = |target: f64| {
        let p = target / rate;
        4.0 * (p * (1.0 - p) / slots).sqrt() * rate
    };
    assert!((stats.sifted_rate_hz - 1.77e4).abs() < band(1.77e4), "{}", stats.sifted_rate_hz);
    let model = (s + d) / 2.0 * rate;
    assert!((stats.sifted_rate_hz - model).abs() < band(model), "{} vs {model}", stats.sifted_rate_hz);
}

#[test]
fn kept_fraction_is_one_half() {
    let alice = AliceConfig::new(1.0, SourceModel::wcp(0.4).unwrap()).unwrap();
    let chain = OpticsChain::new(alice, bb84_core::ChannelConfig::new(0.0).unwrap(), BobConfig::default()).unwrap();
    let mut bits = BitGenerator::ChaCha.source(9);
    let records = run_quantum_phase(&chain, &mut *bits, 100_000, 9);
    let params = SessionParams {
        session_id: 1,
        seed: 9,
        ..SessionParams::default()
    };
    let out = run_loopback(&params, &records).unwrap();
    let accepted = out.bob.summary.accepted as f64;
    assert!(accepted >= 1e4, "{accepted}");
    let kept = out.bob.summary.sifted as f64;
    assert!((kept - accepted / 2.0).abs() < 4.0 * (accepted * 0.25).sqrt(), "{kept} of {accepted}");
}

#[test]
fn single_basis_generator_keeps_everything() {
    let alice = vec![Polarization::H; 1000];
    let bob: Vec<BobDetection> = (0..1000u64)
        .step_by(7)
        .map(|slot| BobDetection {
            slot,
            basis: Polarization::H.basis(),
            bit: false,
        })
        .collect();
    let records = QuantumRecords { alice, bob };
    let out = run_loopback(&SessionParams::default(), &records).unwrap();
    assert_eq!(out.bob.summary.sifted, out.bob.summary.accepted);
}

#[test]
fn sampled_bits_never_reach_distillation() {
    let setup = with_target_qber(QberMode::Sampled(0.1));
    let out = simulate_session(&setup, 77).unwrap();
    let msgs = messages(&out);
    let sifted = sifted_slots_on_wire(&msgs);
    let positions = msgs
        .iter()
        .find_map(|m| match m {
            Message::SampleRequest { positions, .. } => Some(positions.clone()),
            _ => None,
        })
        .unwrap();
    assert_eq!(positions.len(), (sifted.len() as f64 * 0.1).round() as usize);
    let revealed: BTreeSet<u64> = positions.iter().map(|&p| sifted[p as usize]).collect();
    for side in [&out.alice, &out.bob] {
        let kept: BTreeSet<u64> = side.sifted.slot_indices.iter().copied().collect();
        assert!(kept.is_disjoint(&revealed));
        assert_eq!(kept.len() + revealed.len(), sifted.len());
    }
}

#[test]
fn full_compare_measures_the_tuned_qber() {
    let mut setup = with_target_qber(QberMode::FullCompare);
    setup.n_slots = 530_000;
    let out = simulate_session(&setup, 5).unwrap();
    let q = out.bob.summary.qber;
    assert!(q.compared > 1500);
    assert!((q.value - 0.046).abs() < 0.01, "{q:?}");
    assert!(q.lower <= 0.046 && 0.046 <= q.upper, "{q:?}");
    assert_eq!(out.bob.summary.final_bits, 0);
}

#[test]
fn sampled_qber_pools_to_the_tuned_value() {
    let setup = with_target_qber(QberMode::Sampled(0.1));
    let (_, stats) = run_batches(&setup, 6, 200);
    assert!((stats.pooled_qber - 0.046).abs() < 0.01, "{}", stats.pooled_qber);
}

#[test]
fn sifted_error_rate_matches_optics_prediction() {
    let setup = reference_setup();
    let predicted = setup.chain.expected_qber().unwrap();
    let mut cfg = setup;
    cfg.params.qber_mode = QberMode::FullCompare;
    let (_, stats) = run_batches(&cfg, 8, 100);
    let n = stats.sifted as f64;
    let sd = (predicted * (1.0 - predicted) / n).sqrt();
    assert!((stats.pooled_qber - predicted).abs() < 3.0 * sd, "{} vs {predicted}", stats.pooled_qber);
}

#[test]
fn parity_ledger_matches_the_wire() {
    let setup = with_target_qber(QberMode::Reconciled);
    for seed in 0..10 {
        let Ok(out) = simulate_session(&setup, seed) else { continue };
        let queries = messages(&out)
            .iter()
            .filter(|m| matches!(m, Message::ParityQuery(_)))
            .count() as u64;
        assert_eq!(out.bob.summary.leakage.parity_bits_disclosed, queries);
        assert_eq!(out.alice.summary.leakage, out.bob.summary.leakage);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sifting_is_symmetric(seed in any::<u64>(), mu in 0.01f64..0.5) {
        let mut setup = reference_setup();
        setup.n_slots = 20_000;
        setup.chain.alice = AliceConfig::from_output_source(setup.chain.alice.t_eom, SourceModel::spp(mu, 0.07).unwrap()).unwrap();
        setup.params.qber_mode = QberMode::FullCompare;
        let out = simulate_session(&setup, seed).unwrap();
        let wire = sifted_slots_on_wire(&messages(&out));
        prop_assert_eq!(out.alice.summary.sifted, out.bob.summary.sifted);
        prop_assert_eq!(wire.len() as u64, out.bob.summary.sifted);
        prop_assert_eq!(out.alice.summary.qber, out.bob.summary.qber);
    }
}

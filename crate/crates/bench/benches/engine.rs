use std::hint::black_box;

use bb84_bench::{default_records, noisy_keys};
use bb84_core::distill::{cascade_reconcile, draw_seed, toeplitz_hash, ParityResponder};
use bb84_core::hbt::{build_histogram, simulate_hbt, HbtSimConfig};
use bb84_core::protocol::{run_loopback, simulate_session, SessionParams};
use bb84_core::rng::substream;
use bb84_core::security::{max_tolerable_loss, secure_gain};
use bb84_core::transport::{decode_stream, encode_frame, Frame, MessageType};
use bb84_core::{LinkModel, OperatingPoint, RunConfig, SourceKind};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn security(c: &mut Criterion) {
    let op = OperatingPoint::new(7.4e-3, 1.9e-6, 0.046, 1.0, 5.3e6).unwrap();
    c.bench_function("secure_gain", |b| b.iter(|| secure_gain(black_box(&op))));
    let link = LinkModel::reference_spp(0.014, 0.07).unwrap();
    c.bench_function("max_tolerable_loss", |b| {
        b.iter(|| max_tolerable_loss(black_box(&link), 1e-6).unwrap())
    });
}

fn optics_and_session(c: &mut Criterion) {
    let setup = RunConfig::default().session_setup().unwrap();
    let mut group = c.benchmark_group("session");
    group.sample_size(20);
    group.bench_function("quantum_phase_53k_slots", |b| b.iter(|| default_records(black_box(3))));
    let records = default_records(5);
    group.bench_function("loopback_protocol", |b| {
        b.iter(|| run_loopback(&SessionParams::default(), black_box(&records)).unwrap())
    });
    group.bench_function("end_to_end_batch", |b| b.iter(|| simulate_session(&setup, black_box(7)).unwrap()));
    group.finish();
}

fn distill(c: &mut Criterion) {
    let (alice, bob) = noisy_keys(10_000, 0.046, 1);
    c.bench_function("cascade_10k", |b| {
        b.iter_batched(
            || (bob.clone(), ParityResponder::new(alice.clone(), 9)),
            |(mut key, mut oracle)| cascade_reconcile(&mut key, 0.046, 4, 9, &mut oracle).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let seed = draw_seed(10_000, 5_000, &mut substream(2, "bench/seed"));
    c.bench_function("toeplitz_10k_to_5k", |b| {
        b.iter(|| toeplitz_hash(black_box(&alice), &seed, 5_000).unwrap())
    });
}

fn transport(c: &mut Criterion) {
    let frames: Vec<Frame> = (0..1000)
        .map(|i| Frame::new(MessageType::ParityQuery, 42, vec![i as u8; 13]))
        .collect();
    let bytes: Vec<u8> = frames.iter().flat_map(|f| encode_frame(f).unwrap()).collect();
    c.bench_function("decode_1000_frames", |b| b.iter(|| decode_stream(black_box(&bytes)).unwrap()));
}

fn hbt(c: &mut Criterion) {
    let mut cfg = HbtSimConfig::reference(SourceKind::Spp).unwrap();
    cfg.duration_s = 5.0;
    let (s1, s2) = simulate_hbt(&cfg, 1).unwrap();
    let mut group = c.benchmark_group("hbt");
    group.sample_size(10);
    group.bench_function("simulate_5s", |b| b.iter(|| simulate_hbt(black_box(&cfg), 2).unwrap()));
    group.bench_function("histogram_5s", |b| {
        b.iter(|| build_histogram(&s1, &s2, 1.0, 657.0, 187.5).unwrap())
    });
    group.finish();
}

criterion_group!(benches, security, optics_and_session, distill, transport, hbt);
criterion_main!(benches);

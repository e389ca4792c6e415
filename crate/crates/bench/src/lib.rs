//! Fixtures shared by the benchmarks.

use bb84_core::protocol::{run_quantum_phase, QuantumRecords};
use bb84_core::rng::substream;
use bb84_core::RunConfig;
use rand::Rng;

/// Quantum-phase records for one default batch.
pub fn default_records(seed: u64) -> QuantumRecords {
    let cfg = RunConfig::default();
    let setup = cfg.session_setup().expect("default config is valid");
    let mut bits = setup.bit_generator.source(seed);
    run_quantum_phase(&setup.chain, &mut *bits, setup.n_slots, seed)
}

/// A random key and a copy with independent flips at rate `e`.
pub fn noisy_keys(n: usize, e: f64, seed: u64) -> (Vec<bool>, Vec<bool>) {
    let mut rng = substream(seed, "bench/keys");
    let alice: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    let bob = alice.iter().map(|&b| b ^ (rng.random::<f64>() < e)).collect();
    (alice, bob)
}

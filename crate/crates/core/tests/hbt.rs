use bb84_core::hbt::{
    build_histogram, model_level, normalize_peak_areas, side_peak_lifetime, simulate_hbt, CorrelationHistogram,
    HbtSimConfig, PeakReport, TimestampStream,
};
use bb84_core::rng::substream;
use bb84_core::source::{NV_LIFETIME_NS, PULSE_PERIOD_NS};
use bb84_core::{SourceKind, SourceModel};
use rand::Rng;
use rand_distr::{Distribution, Exp};

// three full peaks each side, whole 1 ns bins
const RANGE_NS: f64 = 657.0;

fn histogram(s1: &TimestampStream, s2: &TimestampStream) -> CorrelationHistogram {
    build_histogram(s1, s2, 1.0, RANGE_NS, PULSE_PERIOD_NS).unwrap()
}

fn reference(kind: SourceKind, seed: u64) -> (CorrelationHistogram, Vec<PeakReport>) {
    let (s1, s2) = simulate_hbt(&HbtSimConfig::reference(kind).unwrap(), seed).unwrap();
    let h = histogram(&s1, &s2);
    let peaks = normalize_peak_areas(&h).unwrap();
    (h, peaks)
}

fn poisson_stream(detector: u8, rate_hz: f64, duration_s: f64, seed: u64) -> TimestampStream {
    let mut rng = substream(seed, "test/poisson");
    let gap = Exp::new(rate_hz * 1e-9).unwrap();
    let end = duration_s * 1e9;
    let mut t = gap.sample(&mut rng);
    let mut times = Vec::new();
    while t < end {
        times.push(t);
        t += gap.sample(&mut rng);
    }
    TimestampStream::new(detector, times, duration_s).unwrap()
}

#[test]
fn reference_rates_are_realistic() {
    let (s1, s2) = simulate_hbt(&HbtSimConfig::reference(SourceKind::Wcp).unwrap(), 1).unwrap();
    for s in [&s1, &s2] {
        assert!((s.rate_hz() / 3.5e4 - 1.0).abs() < 0.05, "{}", s.rate_hz());
    }
}

#[test]
fn coherent_pulses_give_unit_areas() {
    let (_, peaks) = reference(SourceKind::Wcp, 2);
    assert_eq!(peaks.len(), 7);
    for p in &peaks {
        assert!((p.area - 1.0).abs() < 0.05, "peak {}: {}", p.k, p.area);
    }
}

#[test]
fn single_photons_suppress_the_central_peak() {
    let (_, peaks) = reference(SourceKind::Spp, 3);
    let center = peaks.iter().find(|p| p.k == 0).unwrap();
    assert!((center.area - 0.07).abs() < 0.02, "{}", center.area);
    for p in peaks.iter().filter(|p| p.k != 0) {
        assert!((p.area - 1.0).abs() < 0.05, "peak {}: {}", p.k, p.area);
    }
    let tau = side_peak_lifetime(&peaks).unwrap();
    assert!((tau / NV_LIFETIME_NS - 1.0).abs() < 0.1, "{tau}");
}

#[test]
fn fitted_peaks_rebuild_the_valleys() {
    let (h, peaks) = reference(SourceKind::Spp, 4);
    let t = PULSE_PERIOD_NS;
    for k in -3..3 {
        let mid = (k as f64 + 0.5) * t;
        // central half of the gap between peaks k and k + 1
        let (a, b) = (mid - t / 4.0, mid + t / 4.0);
        let measured = h.integrate(a, b);
        let model: f64 = (0..(b - a) as usize).map(|i| model_level(&peaks, a + i as f64 + 0.5)).sum();
        assert!(measured > 0.0);
        assert!((model / measured - 1.0).abs() < 0.1, "valley {k}: {model} vs {measured}");
    }
}

#[test]
fn areas_survive_uniform_thinning() {
    let (s1, s2) = simulate_hbt(&HbtSimConfig::reference(SourceKind::Spp).unwrap(), 5).unwrap();
    let full = normalize_peak_areas(&histogram(&s1, &s2)).unwrap();
    let mut rng = substream(5, "test/thin");
    let thin = histogram(&s1.thinned(0.5, &mut rng), &s2);
    let accidentals = thin.accidental_area();
    let thin = normalize_peak_areas(&thin).unwrap();
    for (a, b) in full.iter().zip(&thin) {
        let sigma = (a.area.max(0.01) / accidentals).sqrt();
        assert!((a.area - b.area).abs() < 4.0 * sigma, "peak {}: {} vs {}", a.k, a.area, b.area);
    }
}

#[test]
fn uncorrelated_streams_give_unit_areas() {
    let s1 = poisson_stream(1, 3.5e4, 30.0, 6);
    let s2 = poisson_stream(2, 3.5e4, 30.0, 7);
    let h = histogram(&s1, &s2);
    let sigma = (1.0 / h.accidental_area()).sqrt();
    for p in normalize_peak_areas(&h).unwrap() {
        assert!((p.area - 1.0).abs() < 4.0 * sigma, "peak {}: {}", p.k, p.area);
        assert!((p.raw_area - 1.0).abs() < 4.0 * sigma);
    }
}

#[test]
fn ideal_emitter_has_empty_central_peak() {
    let cfg = HbtSimConfig {
        source: SourceModel::spp(0.022, 0.0).unwrap(),
        duration_s: 30.0,
        ..HbtSimConfig::reference(SourceKind::Spp).unwrap()
    };
    let (s1, s2) = simulate_hbt(&cfg, 8).unwrap();
    let peaks = normalize_peak_areas(&histogram(&s1, &s2)).unwrap();
    let center = peaks.iter().find(|p| p.k == 0).unwrap();
    assert!(center.area < 0.01, "{}", center.area);
}

#[test]
fn histogram_counts_every_pair_in_range() {
    let mut rng = substream(9, "test/pairs");
    let mut draw = |n: usize| {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50_000.0)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (draw(400), draw(500));
    let s1 = TimestampStream::new(1, a.clone(), 5e-5).unwrap();
    let s2 = TimestampStream::new(2, b.clone(), 5e-5).unwrap();
    let h = histogram(&s1, &s2);
    let pairs = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| y - x))
        .filter(|d| (-RANGE_NS..RANGE_NS).contains(d))
        .count() as u64;
    assert_eq!(h.total(), pairs);
}

//! Two-sided exponential peak fit, `A·exp(−|t − c|/τ) + B`, by unweighted
//! least squares on binned counts.
//!
//! For fixed τ the model is linear in `(A, B)`, so those come from the
//! normal equations (restricted to `A, B ≥ 0`) and only `ln τ` is searched
//! (golden section). The model
//! is integrated over each bin rather than sampled at its centre.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    /// Peak height in counts per bin.
    pub amplitude: f64,
    pub lifetime_ns: f64,
    /// Flat level in counts per bin.
    pub background: f64,
    /// Root-mean-square residual in counts per bin.
    pub rms_residual: f64,
    /// False when the lifetime ended on the search bracket or the fit was
    /// degenerate.
    pub converged: bool,
}

/// `∫ₐᵇ exp(−|t − c|/τ) dt`.
pub fn laplace_integral(a: f64, b: f64, c: f64, tau: f64) -> f64 {
    let prim = |x: f64| {
        if x < c {
            tau * ((x - c) / tau).exp()
        } else {
            2.0 * tau - tau * (-(x - c) / tau).exp()
        }
    };
    prim(b) - prim(a)
}

const GOLDEN_ITERATIONS: usize = 100;

/// Fits one peak with the lifetime searched inside `lifetime_bracket`.
/// `bins` are `[a, b)` edges, `counts` the (possibly neighbour-corrected)
/// contents.
pub fn fit_peak(bins: &[(f64, f64)], counts: &[f64], center: f64, lifetime_bracket: (f64, f64)) -> PeakFit {
    let profile = |tau: f64| -> Vec<f64> {
        bins.iter().map(|&(a, b)| laplace_integral(a, b, center, tau) / (b - a)).collect()
    };
    let solve = |tau: f64| -> (f64, f64, f64) {
        let f = profile(tau);
        let n = f.len() as f64;
        let (sf, sy) = (f.iter().sum::<f64>(), counts.iter().sum::<f64>());
        let sff = f.iter().map(|x| x * x).sum::<f64>();
        let sfy = f.iter().zip(counts).map(|(x, y)| x * y).sum::<f64>();
        let sse = |amp: f64, bg: f64| f.iter().zip(counts).map(|(x, y)| (amp * x + bg - y).powi(2)).sum::<f64>();
        let det = n * sff - sf * sf;
        if det.abs() > 1e-300 {
            let (amp, bg) = ((n * sfy - sf * sy) / det, (sff * sy - sf * sfy) / det);
            if amp >= 0.0 && bg >= 0.0 {
                return (amp, bg, sse(amp, bg));
            }
        }
        // both parameters are counts, so fall back to the best edge of the
        // non-negative quadrant
        let flat = (0.0, (sy / n).max(0.0));
        let peak_only = (if sff > 0.0 { (sfy / sff).max(0.0) } else { 0.0 }, 0.0);
        let (e1, e2) = (sse(flat.0, flat.1), sse(peak_only.0, peak_only.1));
        if e1 <= e2 {
            (flat.0, flat.1, e1)
        } else {
            (peak_only.0, peak_only.1, e2)
        }
    };

    if bins.len() < 3 {
        let mean = counts.iter().sum::<f64>() / counts.len().max(1) as f64;
        return PeakFit {
            amplitude: 0.0,
            lifetime_ns: (lifetime_bracket.0 * lifetime_bracket.1).sqrt(),
            background: mean,
            rms_residual: 0.0,
            converged: false,
        };
    }

    let (mut lo, mut hi) = (lifetime_bracket.0.ln(), lifetime_bracket.1.ln());
    let (lo0, hi0) = (lo, hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = solve(x1.exp()).2;
    let mut f2 = solve(x2.exp()).2;
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = solve(x1.exp()).2;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = solve(x2.exp()).2;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let ln_tau = 0.5 * (lo + hi);
    let tau = ln_tau.exp();
    let (amplitude, background, sse) = solve(tau);
    let edge = (ln_tau - lo0).abs() < 1e-6 || (hi0 - ln_tau).abs() < 1e-6;
    PeakFit {
        amplitude,
        lifetime_ns: tau,
        background,
        rms_residual: (sse / bins.len() as f64).sqrt(),
        converged: !edge && sse.is_finite() && amplitude > 0.0,
    }
}

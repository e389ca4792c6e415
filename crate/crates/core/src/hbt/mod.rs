//! Hanbury-Brown–Twiss coincidence analysis.
//!
//! Two detectors behind a 50/50 beamsplitter timestamp their clicks. The
//! histogram of all pairwise delays `t₂ − t₁` shows one peak per pulse
//! period; the area of peak `k`, divided by the accidental level expected
//! for uncorrelated streams (`N₁·N₂·T·T_acq`), is 1 for Poissonian light.
//! The zero-delay area is `C(0)`.

mod fit;

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::source::{sample_emission_times, SourceKind, SourceModel};

pub use fit::{fit_peak, laplace_integral, PeakFit};

#[derive(Debug, Clone, PartialEq)]
pub struct TimestampStream {
    pub detector: u8,
    times_ns: Vec<f64>,
    duration_s: f64,
}

impl TimestampStream {
    pub fn new(detector: u8, times_ns: Vec<f64>, duration_s: f64) -> Result<Self> {
        if !(detector == 1 || detector == 2) {
            return Err(Error::invalid("detector", format!("must be 1 or 2, got {detector}")));
        }
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(Error::invalid("duration_s", "must be > 0"));
        }
        let end = duration_s * 1e9;
        if times_ns.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("times_ns", "not sorted"));
        }
        if times_ns.first().is_some_and(|&t| t < 0.0) || times_ns.last().is_some_and(|&t| t > end) {
            return Err(Error::invalid("times_ns", "outside [0, duration]"));
        }
        Ok(Self {
            detector,
            times_ns,
            duration_s,
        })
    }

    pub fn times_ns(&self) -> &[f64] {
        &self.times_ns
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn len(&self) -> usize {
        self.times_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ns.is_empty()
    }

    pub fn rate_hz(&self) -> f64 {
        self.times_ns.len() as f64 / self.duration_s
    }

    /// Keeps each click with probability `p`.
    pub fn thinned<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Self {
        Self {
            detector: self.detector,
            times_ns: self.times_ns.iter().copied().filter(|_| rng.random::<f64>() < p).collect(),
            duration_s: self.duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ns: f64,
    /// Delays cover `[−range_ns, range_ns)`.
    pub range_ns: f64,
    pub counts: Vec<u64>,
    pub rate1_hz: f64,
    pub rate2_hz: f64,
    pub duration_s: f64,
    pub pulse_period_ns: f64,
}

impl CorrelationHistogram {
    pub fn bin_start(&self, i: usize) -> f64 {
        -self.range_ns + i as f64 * self.bin_width_ns
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.bin_start(i) + 0.5 * self.bin_width_ns
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Coincidences per peak expected for uncorrelated streams.
    pub fn accidental_area(&self) -> f64 {
        self.rate1_hz * self.rate2_hz * self.pulse_period_ns * 1e-9 * self.duration_s
    }

    /// Counts in `[a, b)`, with partial bins weighted by overlap.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let w = self.bin_width_ns;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let lo = self.bin_start(i).max(a);
                let hi = (self.bin_start(i) + w).min(b);
                if hi > lo {
                    c as f64 * (hi - lo) / w
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Peak indices `k` whose whole window `kT ± T/2` lies inside the range.
    pub fn peak_indices(&self) -> Vec<i64> {
        let t = self.pulse_period_ns;
        let kmax = ((self.range_ns - t / 2.0) / t + 1e-9).floor() as i64;
        (-kmax..=kmax).collect()
    }

    pub fn to_csv(&self, meta: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out.push_str(&format!(
            "# rate1_hz = {}\n# rate2_hz = {}\n# duration_s = {}\n# pulse_period_ns = {}\n",
            self.rate1_hz, self.rate2_hz, self.duration_s, self.pulse_period_ns
        ));
        out.push_str("delay_ns,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{c}\n", self.bin_center(i)));
        }
        out
    }
}

/// All-pairs delay histogram of `t₂ − t₁` over `[−range, range)`.
pub fn build_histogram(
    s1: &TimestampStream,
    s2: &TimestampStream,
    bin_width_ns: f64,
    range_ns: f64,
    pulse_period_ns: f64,
) -> Result<CorrelationHistogram> {
    if !(bin_width_ns > 0.0 && range_ns > 0.0 && pulse_period_ns > 0.0) {
        return Err(Error::invalid("bin_width_ns", "bin width, range and period must be > 0"));
    }
    let nbins = (2.0 * range_ns / bin_width_ns).round() as usize;
    if nbins == 0 || ((nbins as f64 * bin_width_ns) - 2.0 * range_ns).abs() > 1e-9 * range_ns {
        return Err(Error::invalid("range_ns", "2·range must be a multiple of the bin width"));
    }
    let mut counts = vec![0u64; nbins];
    let t2 = s2.times_ns();
    let mut lo = 0usize;
    for &t1 in s1.times_ns() {
        while lo < t2.len() && t2[lo] < t1 - range_ns {
            lo += 1;
        }
        for &t in &t2[lo..] {
            let d = t - t1;
            if d >= range_ns {
                break;
            }
            let bin = ((d + range_ns) / bin_width_ns).floor() as usize;
            counts[bin.min(nbins - 1)] += 1;
        }
    }
    let duration_s = s1.duration_s().max(s2.duration_s());
    Ok(CorrelationHistogram {
        bin_width_ns,
        range_ns,
        counts,
        rate1_hz: s1.len() as f64 / duration_s,
        rate2_hz: s2.len() as f64 / duration_s,
        duration_s,
        pulse_period_ns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    /// Peak index; the centre is `k·T`.
    pub k: i64,
    pub center_ns: f64,
    /// Normalized area after the overlapping-tail correction.
    pub area: f64,
    /// Normalized counts inside `kT ± T/2` without correction.
    pub raw_area: f64,
    pub fit: Option<PeakFit>,
}

/// Uncorrected window areas.
pub fn raw_peak_areas(hist: &CorrelationHistogram) -> Result<Vec<PeakReport>> {
    let norm = normalizer(hist)?;
    let t = hist.pulse_period_ns;
    Ok(hist
        .peak_indices()
        .into_iter()
        .map(|k| {
            let c = k as f64 * t;
            let raw = hist.integrate(c - t / 2.0, c + t / 2.0) / norm;
            PeakReport {
                k,
                center_ns: c,
                area: raw,
                raw_area: raw,
                fit: None,
            }
        })
        .collect())
}

fn normalizer(hist: &CorrelationHistogram) -> Result<f64> {
    let norm = hist.accidental_area();
    if !(norm > 0.0) {
        return Err(Error::invalid("rates", "both detector rates and the duration must be > 0"));
    }
    Ok(norm)
}

/// Lifetime guess used by [`normalize_peak_areas`], in periods.
const DEFAULT_LIFETIME_FRACTION: f64 = 0.125;

/// Normalized areas with the tail correction: each window loses the fitted
/// tails of its neighbours and regains the peak's own tail beyond `±T/2`.
pub fn normalize_peak_areas(hist: &CorrelationHistogram) -> Result<Vec<PeakReport>> {
    fit_peaks(hist, hist.pulse_period_ns * DEFAULT_LIFETIME_FRACTION)
}

/// Sweeps of per-peak fits; each sweep subtracts the neighbours' current
/// fitted tails before refitting.
const FIT_SWEEPS: usize = 6;
/// Lifetimes are searched within this factor of the initial guess.
const LIFETIME_BRACKET_FACTOR: f64 = 20.0;

/// Fits `A·exp(−|t − kT|/τ) + B` to every full peak window and returns
/// tail-corrected areas.
pub fn fit_peaks(hist: &CorrelationHistogram, initial_lifetime_ns: f64) -> Result<Vec<PeakReport>> {
    let norm = normalizer(hist)?;
    if !(initial_lifetime_ns > 0.0) {
        return Err(Error::invalid("initial_lifetime_ns", "must be > 0"));
    }
    let t = hist.pulse_period_ns;
    let ks = hist.peak_indices();
    if ks.len() < 3 {
        return Err(Error::invalid("range_ns", "histogram must hold at least three full peaks"));
    }
    let windows: Vec<Vec<usize>> = ks
        .iter()
        .map(|&k| {
            let (a, b) = (k as f64 * t - t / 2.0, k as f64 * t + t / 2.0);
            (0..hist.counts.len())
                .filter(|&i| hist.bin_start(i) >= a - 1e-9 && hist.bin_start(i) + hist.bin_width_ns <= b + 1e-9)
                .collect()
        })
        .collect();

    // a decay longer than half the window is indistinguishable from the
    // flat background
    let bracket = (
        initial_lifetime_ns / LIFETIME_BRACKET_FACTOR,
        (initial_lifetime_ns * LIFETIME_BRACKET_FACTOR).min(t / 2.0),
    );
    if bracket.0 >= bracket.1 {
        return Err(Error::invalid("initial_lifetime_ns", "must be well below the pulse period"));
    }
    let mut fits: Vec<Option<PeakFit>> = vec![None; ks.len()];
    for _ in 0..FIT_SWEEPS {
        let previous = fits.clone();
        for (j, &k) in ks.iter().enumerate() {
            let center = k as f64 * t;
            let mut xs = Vec::with_capacity(windows[j].len());
            let mut ys = Vec::with_capacity(windows[j].len());
            for &i in &windows[j] {
                let (a, b) = (hist.bin_start(i), hist.bin_start(i) + hist.bin_width_ns);
                let others = neighbour_tails(&ks, &previous, j, a, b, t) / hist.bin_width_ns;
                xs.push((a, b));
                ys.push(hist.counts[i] as f64 - others);
            }
            fits[j] = Some(fit_peak(&xs, &ys, center, bracket));
        }
    }

    Ok(ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let c = k as f64 * t;
            let (a, b) = (c - t / 2.0, c + t / 2.0);
            let window = hist.integrate(a, b);
            let fit = fits[j].expect("fitted");
            let w = hist.bin_width_ns;
            let inside_others = neighbour_tails(&ks, &fits, j, a, b, t) / w;
            let own_outside = fit.amplitude * (2.0 * fit.lifetime_ns - laplace_integral(a, b, c, fit.lifetime_ns)) / w;
            PeakReport {
                k,
                center_ns: c,
                area: ((window - inside_others + own_outside) / norm).max(0.0),
                raw_area: window / norm,
                fit: Some(fit),
            }
        })
        .collect())
}

/// Summed fitted exponentials of every peak but `j` over `[a, b)`, in
/// count·ns. Peaks just beyond the histogram are taken to mirror the
/// outermost fitted ones.
fn neighbour_tails(ks: &[i64], fits: &[Option<PeakFit>], j: usize, a: f64, b: f64, t: f64) -> f64 {
    let mut sum = 0.0;
    let last = ks.len() - 1;
    let mut add = |k: i64, f: &PeakFit| {
        sum += f.amplitude * laplace_integral(a, b, k as f64 * t, f.lifetime_ns);
    };
    for (i, (&k, f)) in ks.iter().zip(fits).enumerate() {
        if i != j {
            if let Some(f) = f {
                add(k, f);
            }
        }
    }
    if let Some(f) = &fits[0] {
        add(ks[0] - 1, f);
    }
    if let Some(f) = &fits[last] {
        add(ks[last] + 1, f);
    }
    sum
}

/// Fitted histogram level at delay `d`: every peak plus the mean background.
pub fn model_level(reports: &[PeakReport], d: f64) -> f64 {
    let fits: Vec<&PeakFit> = reports.iter().filter_map(|r| r.fit.as_ref()).collect();
    if fits.is_empty() {
        return 0.0;
    }
    let b = fits.iter().map(|f| f.background).sum::<f64>() / fits.len() as f64;
    b + reports
        .iter()
        .filter_map(|r| r.fit.map(|f| f.amplitude * (-(d - r.center_ns).abs() / f.lifetime_ns).exp()))
        .sum::<f64>()
}

/// Mean fitted lifetime over the peaks with `k ≠ 0`.
pub fn side_peak_lifetime(reports: &[PeakReport]) -> Option<f64> {
    let taus: Vec<f64> = reports
        .iter()
        .filter(|r| r.k != 0)
        .filter_map(|r| r.fit.map(|f| f.lifetime_ns))
        .collect();
    (!taus.is_empty()).then(|| taus.iter().sum::<f64>() / taus.len() as f64)
}

/// Start-stop HBT experiment on a pulsed source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbtSimConfig {
    pub source: SourceModel,
    /// Collection × detection efficiency per photon.
    pub efficiency: f64,
    /// Probability that a photon goes to detector 1.
    pub split: f64,
    /// Uncorrelated background rate per detector.
    pub background_hz: f64,
    pub duration_s: f64,
}

impl HbtSimConfig {
    /// About 3.5·10⁴ clicks/s per detector over 166 s.
    pub fn reference(kind: SourceKind) -> Result<Self> {
        let source = match kind {
            SourceKind::Spp => SourceModel::spp(0.022, 0.07)?,
            SourceKind::Wcp => SourceModel::wcp(0.022)?,
        };
        Ok(Self {
            source,
            efficiency: 0.6,
            split: 0.5,
            background_hz: 0.0,
            duration_s: 166.0,
        })
    }

    fn validate(&self) -> Result<()> {
        for (name, p) in [("efficiency", self.efficiency), ("split", self.split)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        if !(self.background_hz >= 0.0) {
            return Err(Error::invalid("background_hz", "must be >= 0"));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::invalid("duration_s", "must be > 0"));
        }
        Ok(())
    }
}

/// Distribution of the number of detected photons per pulse, `q[k]`.
fn detected_law(source: &SourceModel, efficiency: f64) -> Vec<f64> {
    let emitted: Vec<f64> = match source.kind() {
        SourceKind::Spp => source.spp_law().to_vec(),
        SourceKind::Wcp => {
            let mu = source.mu();
            let mut p = vec![(-mu).exp()];
            let mut n = 1;
            while p.iter().sum::<f64>() < 1.0 - 1e-16 && n < 200 {
                let next = p[n - 1] * mu / n as f64;
                p.push(next);
                n += 1;
            }
            p
        }
    };
    let mut detected = vec![0.0; emitted.len()];
    for (n, &pn) in emitted.iter().enumerate() {
        let mut binom = 1.0; // C(n, k)
        for (k, slot) in detected.iter_mut().enumerate().take(n + 1) {
            *slot += pn * binom * efficiency.powi(k as i32) * (1.0 - efficiency).powi((n - k) as i32);
            binom = binom * (n - k) as f64 / (k + 1) as f64;
        }
    }
    detected
}

/// Simulates both detectors. Pulses with no detected photon are skipped
/// geometrically; each detected photon is delayed by the emitter's
/// exponential decay and sent to detector 1 with probability `split`.
pub fn simulate_hbt(cfg: &HbtSimConfig, seed: u64) -> Result<(TimestampStream, TimestampStream)> {
    cfg.validate()?;
    let mut rng = substream(seed, "hbt/source");
    let law = detected_law(&cfg.source, cfg.efficiency);
    let p_any = 1.0 - law[0];
    let period = cfg.source.pulse_period_ns();
    let end_ns = cfg.duration_s * 1e9;
    let n_pulses = (end_ns / period).floor() as u64;
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();

    if p_any > 0.0 {
        let skip = Geometric::new(p_any).map_err(|e| Error::invalid("efficiency", e.to_string()))?;
        let tail: Vec<f64> = law[1..].iter().scan(0.0, |acc, &q| {
            *acc += q / p_any;
            Some(*acc)
        }).collect();
        let mut pulse = skip.sample(&mut rng);
        while pulse < n_pulses {
            let u: f64 = rng.random();
            let k = 1 + tail.iter().position(|&c| u < c).unwrap_or(tail.len() - 1);
            let base = pulse as f64 * period;
            for offset in sample_emission_times(k, cfg.source.lifetime_ns(), &mut rng)? {
                let t = base + offset;
                if t > end_ns {
                    continue;
                }
                if rng.random::<f64>() < cfg.split {
                    t1.push(t);
                } else {
                    t2.push(t);
                }
            }
            pulse = pulse.saturating_add(1).saturating_add(skip.sample(&mut rng));
        }
    }

    if cfg.background_hz > 0.0 {
        let mut bg = substream(seed, "hbt/background");
        let gap = Exp::new(cfg.background_hz * 1e-9).map_err(|e| Error::invalid("background_hz", e.to_string()))?;
        for times in [&mut t1, &mut t2] {
            let mut t = gap.sample(&mut bg);
            while t <= end_ns {
                times.push(t);
                t += gap.sample(&mut bg);
            }
        }
    }

    t1.sort_by(f64::total_cmp);
    t2.sort_by(f64::total_cmp);
    Ok((
        TimestampStream::new(1, t1, cfg.duration_s)?,
        TimestampStream::new(2, t2, cfg.duration_s)?,
    ))
}

/// Writes `detector time_ns` lines, preceded by a duration comment.
pub fn write_timestamps<W: Write>(mut out: W, streams: &[&TimestampStream]) -> Result<()> {
    let duration = streams.iter().map(|s| s.duration_s()).fold(0.0, f64::max);
    writeln!(out, "# duration_s = {duration}")?;
    for s in streams {
        for t in s.times_ns() {
            writeln!(out, "{} {t}", s.detector)?;
        }
    }
    Ok(())
}

/// Reads the format of [`write_timestamps`]. Without a duration comment the
/// last timestamp sets the duration.
pub fn read_timestamps<R: BufRead>(input: R) -> Result<(TimestampStream, TimestampStream)> {
    let mut duration = None;
    let mut times: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = line.trim();
        if let Some(comment) = text.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("duration_s") {
                let v = v.trim().trim_start_matches('=').trim();
                duration = Some(v.parse::<f64>().map_err(|_| Error::Config {
                    line: lineno,
                    message: format!("bad duration `{v}`"),
                })?);
            }
            continue;
        }
        if text.is_empty() {
            continue;
        }
        let mut parts = text.split(|c: char| c.is_whitespace() || c == ',').filter(|p| !p.is_empty());
        let (Some(det), Some(t), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Config {
                line: lineno,
                message: "expected `detector time_ns`".into(),
            });
        };
        let det: u8 = det.parse().ok().filter(|d| *d == 1 || *d == 2).ok_or_else(|| Error::Config {
            line: lineno,
            message: format!("detector must be 1 or 2, got `{det}`"),
        })?;
        let t: f64 = t.parse().ok().filter(|t: &f64| t.is_finite() && *t >= 0.0).ok_or_else(|| Error::Config {
            line: lineno,
            message: format!("bad arrival time `{t}`"),
        })?;
        times[det as usize - 1].push(t);
    }
    for t in &mut times {
        t.sort_by(f64::total_cmp);
    }
    let last = times.iter().filter_map(|t| t.last()).fold(0.0, |a: f64, &b| a.max(b));
    let duration = duration.unwrap_or(last * 1e-9).max(last * 1e-9);
    let [a, b] = times;
    Ok((TimestampStream::new(1, a, duration)?, TimestampStream::new(2, b, duration)?))
}

//! `bb84`: run sessions, rate curves, HBT analyses and single gain
//! evaluations from a flat configuration file.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bb84_core::config::load_config;
use bb84_core::hbt::{
    build_histogram, fit_peaks, read_timestamps, side_peak_lifetime, simulate_hbt, write_timestamps, PeakReport,
};
use bb84_core::protocol::{run_batches, simulate_session};
use bb84_core::security::{max_loss_curve, sweep_curve, Abscissa, RateCurve};
use bb84_core::{secure_gain, Error, ExperimentKind, OperatingPoint, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bb84", version, about = "BB84 single-photon link simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set bob.gate_width_ns=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory for artifacts.
    #[arg(long, default_value = ".", global = true)]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate key-exchange batches over an in-process link.
    Session {
        /// Acquisition time per batch; sets protocol.batch_slots.
        #[arg(long)]
        duration_ms: Option<f64>,
        #[arg(long)]
        batches: Option<u64>,
        /// Target QBER; solves the dynamic error.
        #[arg(long)]
        target_qber: Option<f64>,
    },
    /// Secure gain along loss or μ.
    Sweep {
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Maximum tolerable loss as a function of μ.
    Maxloss {
        #[arg(long)]
        source: Option<String>,
        #[arg(long, default_value_t = 0.001)]
        mu_from: f64,
        #[arg(long, default_value_t = 0.1)]
        mu_to: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Coincidence histogram and peak areas, simulated or from a file.
    Hbt {
        /// Timestamp file (`detector time_ns` per line).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        duration_s: Option<f64>,
        /// Also write the simulated timestamps.
        #[arg(long)]
        save_timestamps: bool,
    },
    /// Secure gain at one operating point.
    Evalg {
        #[arg(long)]
        p_exp: f64,
        #[arg(long)]
        s_m: f64,
        #[arg(long)]
        e: f64,
        #[arg(long, default_value_t = 1.0)]
        f: f64,
        /// Pulse rate in Hz.
        #[arg(long, default_value_t = 5.3e6)]
        rate: f64,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidParameter { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn set(cfg: &mut RunConfig, key: &str, value: Option<impl ToString>) -> Result<(), Failure> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())
            .map_err(|m| Failure::Usage(format!("--{}: {m}", key.rsplit('.').next().unwrap_or(key))))?;
    }
    Ok(())
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            load_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o).map_err(|e| Failure::Usage(format!("--set {o}: {e}")))?;
    }
    set(&mut cfg, "run.seed", common.seed)?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn stamp(curve: &mut RateCurve, cfg: &RunConfig) {
    curve.metadata.insert(0, ("config_digest".into(), cfg.digest()));
    curve.metadata.insert(0, ("seed".into(), cfg.seed.to_string()));
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load(&cli.common)?;
    let out = cli.common.out.clone();
    match cli.command {
        Command::Session {
            duration_ms,
            batches,
            target_qber,
        } => {
            cfg.kind = ExperimentKind::Session;
            if let Some(ms) = duration_ms {
                let slots = (ms * 1e-3 * 1e9 / cfg.source.pulse_period_ns).round();
                set(&mut cfg, "protocol.batch_slots", Some(slots as u64))?;
            }
            set(&mut cfg, "protocol.batches", batches)?;
            set(&mut cfg, "bob.target_qber", target_qber)?;
            session(&cfg, &out)
        }
        Command::Sweep {
            x,
            source,
            mu,
            from,
            to,
            steps,
        } => {
            cfg.kind = ExperimentKind::Sweep;
            set(&mut cfg, "sweep.x", x)?;
            set(&mut cfg, "source.kind", source)?;
            set(&mut cfg, "source.mu", mu)?;
            set(&mut cfg, "sweep.from", from)?;
            set(&mut cfg, "sweep.to", to)?;
            set(&mut cfg, "sweep.steps", steps)?;
            let link = cfg.link_model()?;
            let mut curve = sweep_curve(&link, cfg.sweep.x, (cfg.sweep.from, cfg.sweep.to), cfg.sweep.steps)?;
            stamp(&mut curve, &cfg);
            let name = match cfg.sweep.x {
                Abscissa::LossDb => "gain_vs_loss.csv",
                Abscissa::Mu => "gain_vs_mu.csv",
            };
            let path = write(&out, name, curve.to_csv())?;
            if let Some(i) = curve.argmax() {
                let (x, g) = curve.samples[i];
                println!("max G = {g:.4e} at {} = {x}", cfg.sweep.x.column());
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Maxloss {
            source,
            mu_from,
            mu_to,
            steps,
            threshold,
        } => {
            cfg.kind = ExperimentKind::MaxLoss;
            set(&mut cfg, "source.kind", source)?;
            set(&mut cfg, "security.g_threshold", threshold)?;
            let link = cfg.link_model()?;
            let mut curve = max_loss_curve(&link, (mu_from, mu_to), steps, cfg.security.g_threshold)?;
            stamp(&mut curve, &cfg);
            let path = write(&out, "max_loss_vs_mu.csv", curve.to_csv())?;
            if let Some(i) = curve.argmax() {
                let (mu, l) = curve.samples[i];
                println!("max tolerable loss {l:.3} dB at mu = {mu}");
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Hbt {
            input,
            source,
            duration_s,
            save_timestamps,
        } => {
            cfg.kind = ExperimentKind::Hbt;
            set(&mut cfg, "source.kind", source)?;
            set(&mut cfg, "hbt.duration_s", duration_s)?;
            set(&mut cfg, "hbt.input", input.map(|p| p.display().to_string()))?;
            hbt(&cfg, &out, save_timestamps)
        }
        Command::Evalg { p_exp, s_m, e, f, rate } => {
            let op = OperatingPoint::new(p_exp, s_m, e, f, rate)?;
            let g = secure_gain(&op);
            println!("G = {:.4e}", g.per_pulse);
            println!("N_QKD = {:.4e} s^-1", g.bits_per_second(rate));
            println!("regime = {:?}", g.regime);
            Ok(())
        }
    }
}

fn session(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let setup = cfg.session_setup()?;
    let (results, stats) = run_batches(&setup, cfg.seed, cfg.protocol.batches);
    // a transcript of the first batch, byte-for-byte replayable
    let first_seed = bb84_core::rng::derive_seed(cfg.seed, "batch0");
    if let Ok(outcome) = simulate_session(&setup, first_seed) {
        write(out, "transcript.bin", outcome.transcript.bytes())?;
    }
    let batches: Vec<serde_json::Value> = results
        .iter()
        .map(|r| match r {
            Ok(s) => serde_json::to_value(s).expect("summary serializes"),
            Err(e) => serde_json::json!({ "aborted": e }),
        })
        .collect();
    let report = serde_json::json!({
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "stats": stats,
        "batches": batches,
    });
    write(out, "session_summary.json", serde_json::to_string_pretty(&report).expect("json"))?;
    write(out, "effective_config.txt", cfg.to_text())?;
    println!(
        "batches = {}  aborted = {}  sifted rate = {:.4e} s^-1  qber = {:.4}  mean final bits = {:.1}",
        stats.batches, stats.aborted, stats.sifted_rate_hz, stats.pooled_qber, stats.mean_final_bits
    );
    if stats.aborted == stats.batches {
        return Err(Failure::Runtime(format!(
            "every batch aborted: {}",
            results.iter().find_map(|r| r.as_ref().err()).cloned().unwrap_or_default()
        )));
    }
    Ok(())
}

fn hbt(cfg: &RunConfig, out: &Path, save: bool) -> Result<(), Failure> {
    let (s1, s2) = if cfg.hbt.input.is_empty() {
        let streams = simulate_hbt(&cfg.hbt_sim()?, cfg.seed)?;
        if save {
            let mut buf = Vec::new();
            write_timestamps(&mut buf, &[&streams.0, &streams.1])?;
            write(out, "timestamps.txt", buf)?;
        }
        streams
    } else {
        let file = fs::File::open(&cfg.hbt.input)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", cfg.hbt.input)))?;
        read_timestamps(std::io::BufReader::new(file))?
    };
    let hist = build_histogram(&s1, &s2, cfg.hbt.bin_width_ns, cfg.hbt.range_ns, cfg.source.pulse_period_ns)?;
    let meta = [("seed", cfg.seed.to_string()), ("config_digest", cfg.digest())];
    write(out, "histogram.csv", hist.to_csv(&meta))?;
    let peaks = fit_peaks(&hist, cfg.source.lifetime_ns)?;
    write(out, "peaks.csv", peaks_csv(&peaks, &meta))?;
    println!("rates {:.4e} / {:.4e} s^-1", hist.rate1_hz, hist.rate2_hz);
    for p in &peaks {
        println!("peak {:+} ({:+.1} ns): area {:.3}", p.k, p.center_ns, p.area);
    }
    if let Some(tau) = side_peak_lifetime(&peaks) {
        println!("lifetime {tau:.2} ns");
    }
    Ok(())
}

fn peaks_csv(peaks: &[PeakReport], meta: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in meta {
        s.push_str(&format!("# {k} = {v}\n"));
    }
    s.push_str("k,center_ns,area,raw_area,amplitude,lifetime_ns,background,rms_residual,converged\n");
    for p in peaks {
        let f = p.fit.expect("fitted");
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.k, p.center_ns, p.area, p.raw_area, f.amplitude, f.lifetime_ns, f.background, f.rms_residual, f.converged
        ));
    }
    s
}

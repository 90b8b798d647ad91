//! `specaug` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 when every `dtm-bench` trial fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use specaug_core::dtm::{dtm_benchmark, dtm_fit, BenchConfig};
use specaug_core::hpss::hpss_decompose;
use specaug_core::io;
use specaug_core::metrics::{delta_m, evaluate, MetricDirections, MetricReport, DEFAULT_BEAT_TOLERANCE};
use specaug_core::pipeline::{
    augment_directory, bench_csv, list_segments, run_ablation, run_pipeline, run_split, run_synth_dataset, RunConfig,
};
use specaug_core::tfr::{spectrogram, Spectrogram};
use specaug_core::Error;

#[derive(Parser, Debug)]
#[command(name = "specaug", version, about = "Harmonic/percussive spectrogram augmentation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (key = value TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise a dataset of one-cycle segments.
    Synth {
        /// Number of segments (overrides the config).
        #[arg(long)]
        n: Option<usize>,
        /// Noise level in dB, `inf` for none (overrides the config).
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Split a directory of segments into train/val/test.
    Split {
        #[arg(long)]
        input: PathBuf,
    },
    /// Magnitude spectrogram of one segment.
    Spectrogram {
        #[arg(long)]
        input: PathBuf,
        /// Sample rate when the segment has no sidecar.
        #[arg(long)]
        fs: Option<f64>,
        /// Also render a log-magnitude PNG.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Harmonic/percussive decomposition of a spectrogram.
    Hpss {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        kh: Option<usize>,
        #[arg(long)]
        kp: Option<usize>,
    },
    /// Fit the two-vibration template to one segment.
    Dtm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fs: Option<f64>,
    },
    /// Identification rate of the template fit against SNR.
    DtmBench {
        /// Trials per SNR (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated SNRs in dB, `inf` for noiseless.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr: Option<Vec<f64>>,
    },
    /// Augment a directory of segments.
    Augment {
        #[arg(long)]
        input: PathBuf,
    },
    /// Metrics of a prediction, or Δm% of a table of metric rows.
    Eval(EvalArgs),
    /// Full pipeline.
    Run {
        /// Also write the six placement × domain variants.
        #[arg(long)]
        ablation: bool,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted signal (1-D NPY).
    #[arg(long, requires_all = ["reference", "pred_beats", "true_beats"], conflicts_with = "table")]
    pred: Option<PathBuf>,
    /// Reference signal (1-D NPY).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Detected beat times in s (JSON array).
    #[arg(long)]
    pred_beats: Option<PathBuf>,
    /// True beat times in s (JSON array).
    #[arg(long)]
    true_beats: Option<PathBuf>,
    /// Beat matching tolerance in s.
    #[arg(long, default_value_t = DEFAULT_BEAT_TOLERANCE)]
    tol: f64,
    /// CSV with columns method,rmse,pcc,heartbeat_error,mdr.
    #[arg(long, requires = "baseline")]
    table: Option<PathBuf>,
    /// Method name of the baseline row in `--table`.
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
    AllTrialsFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::AllTrialsFailed) => {
            eprintln!("error: every benchmark trial failed to identify either vibration");
            ExitCode::from(3)
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(common: &Common) -> CliResult<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Failure::Usage("--out is required for this command".into()))
}

/// Write to `--out` when given, stdout otherwise.
fn emit(common: &Common, text: &str) -> CliResult {
    match &common.out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| data_io(parent, e))?;
            }
            fs::write(p, text).map_err(|e| data_io(p, e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| data_io(Path::new("<stdout>"), e)),
    }
}

fn data_io(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serialises") + "\n"
}

fn dispatch(cli: Cli) -> CliResult {
    let common = &cli.common;
    match cli.command {
        Command::Synth { n, snr_db } => {
            let mut cfg = load_config(common)?;
            if let Some(n) = n {
                cfg.n_segments = n;
            }
            if let Some(s) = snr_db {
                cfg.snr_db = s;
            }
            cfg.validate()?;
            let ds = run_synth_dataset(&cfg, require_out(common)?)?;
            println!("wrote {} segments", ds.len());
        }
        Command::Split { input } => {
            let cfg = load_config(common)?;
            let ids: Vec<String> = list_segments(&input)?
                .iter()
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            let fr = [cfg.train_fraction, cfg.val_fraction, cfg.test_fraction];
            let split = run_split(&ids, fr, cfg.seed)?;
            emit(common, &to_json(&split))?;
        }
        Command::Spectrogram { input, fs, png } => {
            let cfg = load_config(common)?;
            let (seg, _) = io::load_segment(&input, fs.or(Some(cfg.fs)))?;
            let spec = spectrogram(&seg, &cfg.stft())?;
            io::save_spectrogram(require_out(common)?, &spec)?;
            if let Some(p) = png {
                write_png(&spec, &p)?;
            }
        }
        Command::Hpss { input, kh, kp } => {
            let cfg = load_config(common)?;
            let mut hc = cfg.hpss();
            hc.k_h = kh.unwrap_or(hc.k_h);
            hc.k_p = kp.unwrap_or(hc.k_p);
            hc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let spec = io::load_spectrogram(&input, None)?;
            let hp = hpss_decompose(&spec, &hc)?;
            let dir = require_out(common)?;
            io::save_spectrogram(&dir.join("harmonic.npy"), &hp.harmonic)?;
            io::save_spectrogram(&dir.join("percussive.npy"), &hp.percussive)?;
            io::save_matrix(&dir.join("mask_h.npy"), &hp.mask_h)?;
            io::save_matrix(&dir.join("mask_p.npy"), &hp.mask_p)?;
        }
        Command::Dtm { input, fs } => {
            let cfg = load_config(common)?;
            let (seg, _) = io::load_segment(&input, fs.or(Some(cfg.fs)))?;
            let dtm = specaug_core::dtm::DtmConfig {
                bounds: specaug_core::dtm::DtmConfig::with_tau(seg.duration(), cfg.tau).bounds,
                ..cfg.dtm()
            };
            let fit = dtm_fit(&seg, &dtm, cfg.seed)?;
            emit(common, &to_json(&fit))?;
        }
        Command::DtmBench { trials, snr } => {
            let cfg = load_config(common)?;
            let trials = trials.unwrap_or(cfg.bench_trials);
            let grid = snr.unwrap_or_else(|| cfg.bench_snr_db.clone());
            if trials == 0 || grid.is_empty() {
                return Err(Failure::Usage("need at least one trial and one SNR".into()));
            }
            let bcfg = BenchConfig {
                fs: cfg.fs,
                duration: cfg.duration,
                dtm: cfg.dtm(),
                tone: None,
            };
            let rows = dtm_benchmark(&grid, trials, cfg.seed, &bcfg)?;
            emit(common, &bench_csv(&rows))?;
            if rows.iter().all(|r| r.rate_v1 == 0.0 && r.rate_v2 == 0.0) {
                return Err(Failure::AllTrialsFailed);
            }
        }
        Command::Augment { input } => {
            let cfg = load_config(common)?;
            let out = require_out(common)?;
            let m = augment_directory(&input, &cfg, out)?;
            println!(
                "augmented {} of {} segments",
                m.entries.iter().filter(|e| e.augmented).count(),
                m.entries.len()
            );
        }
        Command::Eval(args) => eval(common, args)?,
        Command::Run { ablation } => {
            let mut cfg = load_config(common)?;
            if let Some(out) = &common.out {
                cfg.out_dir = out.clone();
            }
            let report = if ablation {
                let (report, variants) = run_ablation(&cfg)?;
                for (policy, path) in variants {
                    println!("{} {}", policy.label(), path.display());
                }
                report
            } else {
                run_pipeline(&cfg)?
            };
            println!(
                "{} segments, {} train, {} augmented",
                report.n_segments, report.n_train, report.n_augmented
            );
            println!("manifest {} sha256 {}", report.manifest_path.display(), report.manifest_sha256);
        }
    }
    Ok(())
}

fn read_beats(path: &Path) -> CliResult<Vec<f64>> {
    Ok(io::read_json(path)?)
}

fn read_signal(path: &Path) -> CliResult<Vec<f64>> {
    let (shape, v) = io::read_npy(path)?;
    if shape.len() != 1 {
        return Err(Failure::Data(Error::InvalidInput(format!(
            "{}: expected a 1-D array, got shape {shape:?}",
            path.display()
        ))));
    }
    Ok(v)
}

#[derive(Debug, Deserialize)]
struct TableRow {
    method: String,
    rmse: f64,
    pcc: f64,
    heartbeat_error: f64,
    mdr: f64,
}

fn eval(common: &Common, a: EvalArgs) -> CliResult {
    if let Some(table) = a.table {
        let baseline = a.baseline.expect("clap enforces --baseline");
        let mut rdr = csv::Reader::from_path(&table).map_err(|e| csv_err(&table, e))?;
        let rows: Vec<TableRow> = rdr
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| csv_err(&table, e))?;
        let report = |r: &TableRow| MetricReport {
            rmse: r.rmse,
            pcc: r.pcc,
            heartbeat_error: r.heartbeat_error,
            mdr: r.mdr,
        };
        let base = rows
            .iter()
            .find(|r| r.method == baseline)
            .map(report)
            .ok_or_else(|| Failure::Data(Error::InvalidInput(format!("no row named {baseline:?}"))))?;
        let dirs = MetricDirections::default();
        let mut out = String::from("method,delta_m_percent\n");
        for r in &rows {
            let d = delta_m(&report(r), &base, &dirs)?;
            out.push_str(&format!("{},{d:.4}\n", r.method));
        }
        return emit(common, &out);
    }
    let (Some(pred), Some(reference), Some(pb), Some(tb)) = (a.pred, a.reference, a.pred_beats, a.true_beats) else {
        return Err(Failure::Usage("eval needs --pred/--reference/--pred-beats/--true-beats or --table".into()));
    };
    let report = evaluate(
        &read_signal(&pred)?,
        &read_signal(&reference)?,
        &read_beats(&pb)?,
        &read_beats(&tb)?,
        a.tol,
    )?;
    emit(common, &to_json(&report))
}

fn csv_err(path: &Path, e: csv::Error) -> Failure {
    Failure::Data(Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// Log-magnitude image, time left to right and low frequencies at the
/// bottom, 80 dB of range.
fn write_png(spec: &Spectrogram, path: &Path) -> CliResult {
    let (m, n) = spec.values.dim();
    let peak = spec.values.iter().fold(0.0f64, |a, &b| a.max(b));
    let img = image::GrayImage::from_fn(m as u32, n as u32, |x, y| {
        let v = spec.values[[x as usize, n - 1 - y as usize]];
        let db = if peak > 0.0 && v > 0.0 { 20.0 * (v / peak).log10() } else { -80.0 };
        image::Luma([((db.max(-80.0) + 80.0) / 80.0 * 255.0).round() as u8])
    });
    img.save(path)
        .map_err(|e| Failure::Data(Error::InvalidInput(format!("{}: {e}", path.display()))))
}

//! Batch driver: synthesis, split, decomposition, template fit,
//! augmentation and the benchmark report, all written to one run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.toml            resolved configuration
//! segments/seg_NNNNN.*   input segments (synthesised unless ingested)
//! dataset.json           segment list with content hashes
//! split.json             train/val/test ids
//! spectrograms/          magnitude STFT per training segment
//! hpss/                  harmonic and percussive components
//! dtm/                   fitted parameters per segment
//! augmented/             spectrograms after augmentation
//! dtm_benchmark.csv
//! manifest.json          every output with its SHA-256
//! run.log                one JSON object per line
//! ```
//!
//! Every random draw derives from the configured seed, and outputs are
//! assembled in segment order, so a run is a pure function of its config.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augment::{augment_dataset, AugPolicy, MaskDomain, MaskSpec, Placement, SegmentInput};
use crate::dtm::{dtm_benchmark, dtm_fit, BenchConfig, BenchRow, DtmConfig, FittedTheta, Theta};
use crate::error::{Error, Result};
use crate::hpss::{hpss_decompose, HpssConfig, HpssResult};
use crate::io;
use crate::seeds::derive_seed;
use crate::signal::{add_noise, synthesize_segment, Segment};
use crate::tfr::{spectrogram, Spectrogram, StftConfig};

/// Seed streams, so that stages never share random numbers.
mod stream {
    pub const THETA: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const FIT: u64 = 4;
    pub const BENCH: u64 = 5;
}

/// Flat run configuration, read from `key = value` TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Directory of existing segment NPYs; segments are synthesised when unset.
    pub input_dir: Option<PathBuf>,
    pub seed: u64,

    pub n_segments: usize,
    pub fs: f64,
    pub duration: f64,
    /// Noise level of synthesised segments; `inf` for none.
    pub snr_db: f64,

    pub win_len: usize,
    pub hop: usize,
    pub nfft: usize,
    pub freq_max: f64,

    pub k_h: usize,
    pub k_p: usize,

    pub tau: f64,
    pub n_starts: usize,
    pub max_iters: usize,

    pub proportion: f64,
    pub domain: MaskDomain,
    pub placement: Placement,
    pub w_t: usize,
    pub w_f: usize,

    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,

    pub bench_snr_db: Vec<f64>,
    /// Trials per SNR; 0 skips the benchmark.
    pub bench_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("specaug-run"),
            input_dir: None,
            seed: 0,
            n_segments: 91 * 45,
            fs: 200.0,
            duration: 4.0,
            snr_db: 10.0,
            win_len: 64,
            hop: 4,
            nfft: 256,
            freq_max: 50.0,
            k_h: 17,
            k_p: 17,
            tau: 0.5,
            n_starts: 24,
            max_iters: 200,
            proportion: 0.2,
            domain: MaskDomain::Both,
            placement: Placement::Dtm,
            w_t: 24,
            w_f: 12,
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            bench_snr_db: vec![f64::INFINITY, 10.0, 0.0, -5.0],
            bench_trials: 50,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {fr:?} must be in [0,1] and sum to 1")));
        }
        if !(self.fs > 0.0 && self.duration > 0.0) {
            return Err(Error::Config("fs and duration must be positive".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        if self.n_segments == 0 && self.input_dir.is_none() {
            return Err(Error::Config("n_segments must be >= 1".into()));
        }
        let as_config = |e: Error| Error::Config(e.to_string());
        self.stft().validate().map_err(as_config)?;
        self.hpss().validate().map_err(as_config)?;
        self.dtm().validate().map_err(as_config)?;
        self.policy().validate().map_err(as_config)
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            win_len: self.win_len,
            hop: self.hop,
            nfft: self.nfft,
            freq_max: self.freq_max,
        }
    }

    pub fn hpss(&self) -> HpssConfig {
        HpssConfig {
            k_h: self.k_h,
            k_p: self.k_p,
        }
    }

    pub fn dtm(&self) -> DtmConfig {
        DtmConfig {
            n_starts: self.n_starts,
            max_iters: self.max_iters,
            ..DtmConfig::with_tau(self.duration, self.tau)
        }
    }

    /// The augmentation policy; its seed is the run seed.
    pub fn policy(&self) -> AugPolicy {
        AugPolicy {
            proportion: self.proportion,
            domain: self.domain,
            placement: self.placement,
            seed: self.seed,
            w_t: self.w_t,
            w_f: self.w_f,
        }
    }
}

/// Line-oriented JSON log. Entries carry no timestamps so that reruns
/// produce identical logs.
pub struct RunLog {
    out: Option<BufWriter<File>>,
    path: PathBuf,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: Some(BufWriter::new(f)),
            path: path.to_path_buf(),
        })
    }

    /// A log that discards everything.
    pub fn sink() -> Self {
        Self {
            out: None,
            path: PathBuf::new(),
        }
    }

    pub fn event(&mut self, stage: &str, mut fields: serde_json::Value) -> Result<()> {
        log::info!("{stage}: {fields}");
        let Some(out) = self.out.as_mut() else {
            return Ok(());
        };
        if let Some(obj) = fields.as_object_mut() {
            obj.insert("stage".into(), stage.into());
        }
        serde_json::to_writer(&mut *out, &fields).map_err(|e| Error::json(&self.path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub segment_id: String,
    pub file: String,
    pub sha256: String,
}

/// Segment file name for index `i`.
pub fn segment_id(i: usize) -> String {
    format!("seg_{i:05}")
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn file_entry(root: &Path, p: &Path) -> Result<FileEntry> {
    Ok(FileEntry {
        path: relative(root, p),
        sha256: io::sha256_file(p)?,
    })
}

/// Synthesise `n_segments` one-cycle segments with parameters drawn inside
/// the fit bounds, writing NPYs and sidecars into `dir`.
pub fn run_synth_dataset(cfg: &RunConfig, dir: &Path) -> Result<Vec<DatasetEntry>> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dtm = cfg.dtm();
    let entries: Vec<DatasetEntry> = (0..cfg.n_segments)
        .into_par_iter()
        .map(|i| {
            let id = segment_id(i);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[stream::THETA, i as u64]));
            let cycle = Theta::sample(&dtm, &mut rng).cycle(&dtm.shape);
            let clean = synthesize_segment(&[cycle], cfg.fs, cfg.duration)?;
            let seg = add_noise(&clean, cfg.snr_db, derive_seed(cfg.seed, &[stream::NOISE, i as u64]), None)?;
            let path = dir.join(format!("{id}.npy"));
            let snr = cfg.snr_db.is_finite().then_some(cfg.snr_db);
            io::save_segment(&path, &seg, &[cycle], snr)?;
            Ok(DatasetEntry {
                segment_id: id,
                file: format!("{}.npy", segment_id(i)),
                sha256: io::sha256_file(&path)?,
            })
        })
        .collect::<Result<_>>()?;
    io::write_json(&dir.join("dataset.json"), &entries)?;
    Ok(entries)
}

/// Segment NPYs in `dir`, sorted by file name.
pub fn list_segments(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "npy") {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no .npy segments in {}", dir.display())));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffle and cut into train/val/test. Train and validation sizes are
/// rounded; test takes the remainder. Ids keep their input order within
/// each part.
pub fn run_split(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let n = ids.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::SPLIT])));
    let mut part = vec![2u8; n];
    for &i in &order[..n_train] {
        part[i] = 0;
    }
    for &i in &order[n_train..n_train + n_val] {
        part[i] = 1;
    }
    let pick = |k: u8| ids.iter().zip(&part).filter(|(_, &p)| p == k).map(|(id, _)| id.clone()).collect();
    Ok(Split {
        train: pick(0),
        val: pick(1),
        test: pick(2),
    })
}

/// Per-segment outputs of the analysis stages.
#[derive(Debug, Clone)]
pub struct Analysed {
    pub id: String,
    pub spectrogram: Spectrogram,
    pub hpss: HpssResult,
    /// `None` when the segment carries no signal to fit.
    pub theta: Option<FittedTheta>,
}

/// Spectrogram, decomposition and template fit of one segment. `index`
/// selects the fit's seed stream.
pub fn analyse_segment(id: &str, seg: &Segment, cfg: &RunConfig, index: usize) -> Result<Analysed> {
    let spec = spectrogram(seg, &cfg.stft()).map_err(|e| e.at_stage("spectrogram", id))?;
    let hp = hpss_decompose(&spec, &cfg.hpss()).map_err(|e| e.at_stage("hpss", id))?;
    let theta = match dtm_fit(seg, &cfg.dtm(), derive_seed(cfg.seed, &[stream::FIT, index as u64])) {
        Ok(t) => Some(t),
        Err(Error::NoSignal) => None,
        Err(e) => return Err(e.at_stage("dtm", id)),
    };
    Ok(Analysed {
        id: id.to_string(),
        spectrogram: spec,
        hpss: hp,
        theta,
    })
}

/// One row of the augmentation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub segment_id: String,
    pub augmented: bool,
    pub mask_spec: Option<MaskSpec>,
    pub theta: Option<FittedTheta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `complete`, or `failed` when a stage aborted the run.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub policy: AugPolicy,
    pub entries: Vec<ManifestEntry>,
    pub files: Vec<FileEntry>,
}

/// Augment already-analysed segments and write the results under `out_dir`.
pub fn write_augmented(
    analysed: &[Analysed],
    policy: &AugPolicy,
    root: &Path,
    out_dir: &Path,
) -> Result<(Vec<ManifestEntry>, Vec<FileEntry>)> {
    let inputs: Vec<SegmentInput> = analysed
        .iter()
        .map(|a| SegmentInput {
            spectrogram: &a.spectrogram,
            hpss: &a.hpss,
            theta: a.theta.as_ref(),
        })
        .collect();
    let outputs = augment_dataset(&inputs, policy).map_err(|e| e.at_stage("augment", "dataset"))?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(outputs.len());
    let mut files = Vec::with_capacity(outputs.len());
    for (a, out) in analysed.iter().zip(outputs) {
        let path = out_dir.join(format!("{}.npy", a.id));
        io::save_spectrogram(&path, &out.output).map_err(|e| e.at_stage("augment", &a.id))?;
        files.push(file_entry(root, &path)?);
        entries.push(ManifestEntry {
            segment_id: a.id.clone(),
            augmented: out.augmented,
            mask_spec: out.mask_spec,
            theta: a.theta,
        });
    }
    Ok((entries, files))
}

/// Analyse every segment NPY in `input_dir` and augment the set.
///
/// Writes augmented spectrograms and `manifest.json` into `out_dir`.
pub fn augment_directory(input_dir: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let paths = list_segments(input_dir)?;
    let analysed: Vec<Analysed> = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = stem(p);
            let (seg, _) = io::load_segment(p, Some(cfg.fs)).map_err(|e| e.at_stage("load", &id))?;
            analyse_segment(&id, &seg, cfg, i)
        })
        .collect::<Result<_>>()?;
    let policy = cfg.policy();
    let (entries, files) = write_augmented(&analysed, &policy, out_dir, out_dir)?;
    let manifest = Manifest {
        status: "complete".into(),
        error: None,
        seed: cfg.seed,
        policy,
        entries,
        files,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest_sha256: String,
    pub n_segments: usize,
    pub n_train: usize,
    pub n_augmented: usize,
    pub bench: Vec<BenchRow>,
}

/// CSV with header `snr_db,rate_v1,rate_v2,n_trials`.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("snr_db,rate_v1,rate_v2,n_trials\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.snr_db, r.rate_v1, r.rate_v2, r.n_trials);
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Stages<'a> {
    cfg: &'a RunConfig,
    root: &'a Path,
    log: RunLog,
    files: Vec<FileEntry>,
    entries: Vec<ManifestEntry>,
    analysed: Vec<Analysed>,
    n_segments: usize,
    n_train: usize,
    bench: Vec<BenchRow>,
}

impl Stages<'_> {
    fn track(&mut self, p: &Path) -> Result<()> {
        self.files.push(file_entry(self.root, p)?);
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let root = self.root;
        let config_path = root.join("config.toml");
        write_text(&config_path, &cfg.to_toml())?;
        self.track(&config_path)?;
        self.log.event("config", json!({ "seed": cfg.seed, "config": cfg.to_toml() }))?;

        let seg_dir = match &cfg.input_dir {
            Some(dir) => {
                self.log.event("ingest", json!({ "input_dir": dir.to_string_lossy() }))?;
                dir.clone()
            }
            None => {
                let dir = root.join("segments");
                let ds = run_synth_dataset(cfg, &dir).map_err(|e| e.at_stage("synth", "dataset"))?;
                self.log.event(
                    "synth",
                    json!({ "n_segments": ds.len(), "theta_stream": stream::THETA, "noise_stream": stream::NOISE }),
                )?;
                for d in &ds {
                    let p = dir.join(&d.file);
                    self.track(&p)?;
                    self.track(&io::sidecar_path(&p))?;
                }
                dir
            }
        };
        let paths = list_segments(&seg_dir)?;
        self.n_segments = paths.len();
        let ids: Vec<String> = paths.iter().map(|p| stem(p)).collect();

        let fr = [cfg.train_fraction, cfg.val_fraction, cfg.test_fraction];
        let split = run_split(&ids, fr, cfg.seed).map_err(|e| e.at_stage("split", "dataset"))?;
        let split_path = root.join("split.json");
        io::write_json(&split_path, &split)?;
        self.track(&split_path)?;
        self.n_train = split.train.len();
        self.log.event(
            "split",
            json!({ "train": split.train.len(), "val": split.val.len(), "test": split.test.len(), "stream": stream::SPLIT }),
        )?;

        // Analysis of the training split, reloading each segment from disk.
        let train: Vec<(usize, &PathBuf)> = paths
            .iter()
            .enumerate()
            .filter(|(_, p)| split.train.binary_search(&stem(p)).is_ok())
            .collect();
        let analysed: Vec<Analysed> = train
            .par_iter()
            .map(|&(i, p)| {
                let id = stem(p);
                let (seg, _) = io::load_segment(p, Some(cfg.fs)).map_err(|e| e.at_stage("load", &id))?;
                analyse_segment(&id, &seg, cfg, i)
            })
            .collect::<Result<_>>()?;
        for a in &analysed {
            let spec_path = root.join("spectrograms").join(format!("{}.npy", a.id));
            io::save_spectrogram(&spec_path, &a.spectrogram).map_err(|e| e.at_stage("spectrogram", &a.id))?;
            self.track(&spec_path)?;
            self.track(&io::sidecar_path(&spec_path))?;
            for (kind, s) in [("harmonic", &a.hpss.harmonic), ("percussive", &a.hpss.percussive)] {
                let p = root.join("hpss").join(format!("{}_{kind}.npy", a.id));
                io::save_matrix(&p, &s.values).map_err(|e| e.at_stage("hpss", &a.id))?;
                self.track(&p)?;
            }
            let p = root.join("dtm").join(format!("{}.json", a.id));
            io::write_json(&p, &a.theta).map_err(|e| e.at_stage("dtm", &a.id))?;
            self.track(&p)?;
        }
        let n_fit = analysed.iter().filter(|a| a.theta.is_some_and(|t| !t.is_degenerate())).count();
        self.log.event(
            "analyse",
            json!({
                "n_segments": analysed.len(),
                "n_usable_fits": n_fit,
                "stft": cfg.stft(),
                "hpss": cfg.hpss(),
                "dtm": cfg.dtm(),
                "fit_stream": stream::FIT,
            }),
        )?;

        let policy = cfg.policy();
        let (entries, files) = write_augmented(&analysed, &policy, root, &root.join("augmented"))?;
        self.files.extend(files);
        self.log.event(
            "augment",
            json!({
                "policy": policy,
                "n_augmented": entries.iter().filter(|e| e.augmented).count(),
            }),
        )?;
        self.entries = entries;
        self.analysed = analysed;

        if cfg.bench_trials > 0 {
            let bcfg = BenchConfig {
                fs: cfg.fs,
                duration: cfg.duration,
                dtm: cfg.dtm(),
                tone: None,
            };
            let bench_seed = derive_seed(cfg.seed, &[stream::BENCH]);
            let rows = dtm_benchmark(&cfg.bench_snr_db, cfg.bench_trials, bench_seed, &bcfg)
                .map_err(|e| e.at_stage("dtm-bench", "benchmark"))?;
            let p = root.join("dtm_benchmark.csv");
            write_text(&p, &bench_csv(&rows))?;
            self.track(&p)?;
            self.log.event("dtm-bench", json!({ "seed": bench_seed, "rows": rows }))?;
            self.bench = rows;
        }
        Ok(())
    }
}

fn write_manifest(root: &Path, manifest: &Manifest) -> Result<(PathBuf, String)> {
    let path = root.join("manifest.json");
    io::write_json(&path, manifest)?;
    let hash = io::sha256_file(&path)?;
    Ok((path, hash))
}

fn prepare(cfg: &RunConfig) -> Result<(PathBuf, RunLog)> {
    cfg.validate()?;
    let root = cfg.out_dir.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let log = RunLog::create(&root.join("run.log"))?;
    Ok((root, log))
}

fn execute<'a>(cfg: &'a RunConfig, root: &'a Path, log: RunLog) -> Result<(Stages<'a>, Result<()>)> {
    let mut st = Stages {
        cfg,
        root,
        log,
        files: Vec::new(),
        entries: Vec::new(),
        analysed: Vec::new(),
        n_segments: 0,
        n_train: 0,
        bench: Vec::new(),
    };
    let outcome = st.run();
    if let Err(e) = &outcome {
        st.log.event("error", json!({ "error": e.to_string() }))?;
    }
    Ok((st, outcome))
}

fn finish(st: &Stages<'_>, outcome: Result<()>) -> Result<RunReport> {
    let manifest = Manifest {
        status: if outcome.is_ok() { "complete" } else { "failed" }.into(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        seed: st.cfg.seed,
        policy: st.cfg.policy(),
        entries: st.entries.clone(),
        files: st.files.clone(),
    };
    let (manifest_path, manifest_sha256) = write_manifest(st.root, &manifest)?;
    outcome?;
    Ok(RunReport {
        out_dir: st.root.to_path_buf(),
        manifest_path,
        manifest_sha256,
        n_segments: st.n_segments,
        n_train: st.n_train,
        n_augmented: st.entries.iter().filter(|e| e.augmented).count(),
        bench: st.bench.clone(),
    })
}

/// Full run: synthesise (or ingest), split, analyse and augment the
/// training split, benchmark the fit, and write the manifest.
///
/// On failure the manifest is still written, marked `failed` and listing
/// the outputs produced so far, and the stage error is returned.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let (root, log) = prepare(cfg)?;
    let (st, outcome) = execute(cfg, &root, log)?;
    finish(&st, outcome)
}

/// [`run_pipeline`] followed by the six placement × domain variants of the
/// policy, each augmenting the same analysed training split into
/// `ablation/<label>/` with its own manifest.
pub fn run_ablation(cfg: &RunConfig) -> Result<(RunReport, Vec<(AugPolicy, PathBuf)>)> {
    let (root, log) = prepare(cfg)?;
    let (mut st, outcome) = execute(cfg, &root, log)?;
    if outcome.is_err() {
        return finish(&st, outcome).map(|r| (r, Vec::new()));
    }
    let mut variants = Vec::new();
    for policy in cfg.policy().ablations() {
        let dir = root.join("ablation").join(policy.label());
        let (entries, files) = write_augmented(&st.analysed, &policy, &dir, &dir)?;
        let manifest = Manifest {
            status: "complete".into(),
            error: None,
            seed: cfg.seed,
            policy,
            entries,
            files,
        };
        let (path, hash) = write_manifest(&dir, &manifest)?;
        st.log
            .event("ablation", json!({ "label": policy.label(), "policy": policy, "manifest_sha256": hash }))?;
        variants.push((policy, path));
    }
    let report = finish(&st, Ok(()))?;
    Ok((report, variants))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        RunConfig {
            out_dir: dir.to_path_buf(),
            n_segments: 10,
            bench_trials: 2,
            bench_snr_db: vec![f64::INFINITY, 0.0],
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_round_trip() {
        let cfg = RunConfig::from_toml("seed = 7\nproportion = 0.3\ndomain = \"time\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.domain, MaskDomain::Time);
        assert_eq!((cfg.tau, cfg.w_t, cfg.w_f, cfg.fs, cfg.duration), (0.5, 24, 12, 200.0, 4.0));
        assert_eq!(cfg.n_segments, 4095);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(RunConfig::from_toml("no_such_key = 1").is_err());
        assert!(RunConfig::from_toml("train_fraction = 0.9").is_err());
        assert!(RunConfig::from_toml("proportion = 2.0").is_err());
        assert!(RunConfig::from_toml("k_h = 4").is_err());
    }

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..100).map(segment_id).collect();
        let s = run_split(&ids, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        assert_eq!(all, ids);
        assert_eq!(s, run_split(&ids, [0.8, 0.1, 0.1], 1).unwrap());

        let s = run_split(&ids, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(s.train.len(), 100);
        assert!(run_split(&[], [1.0, 0.0, 0.0], 1).is_err());
        assert!(run_split(&ids, [0.5, 0.1, 0.1], 1).is_err());
    }

    #[test]
    fn synth_writes_segments_and_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let ds = run_synth_dataset(&cfg, &dir.path().join("segs")).unwrap();
        assert_eq!(ds.len(), 10);
        let npys = list_segments(&dir.path().join("segs")).unwrap();
        assert_eq!(npys.len(), 10);
        for p in &npys {
            assert!(io::sidecar_path(p).exists());
            let (seg, side) = io::load_segment(p, None).unwrap();
            assert_eq!(seg.len(), 800);
            assert_eq!(side.unwrap().cycle_params.len(), 1);
        }
    }

    #[test]
    fn zero_proportion_outputs_the_recombination() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            proportion: 0.0,
            bench_trials: 0,
            ..small(dir.path())
        };
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.n_augmented, 0);
        assert_eq!(report.n_train, 8);
        let split: Split = io::read_json(&dir.path().join("split.json")).unwrap();
        for id in &split.train {
            let seg_path = dir.path().join("segments").join(format!("{id}.npy"));
            let (seg, _) = io::load_segment(&seg_path, None).unwrap();
            let spec = spectrogram(&seg, &cfg.stft()).unwrap();
            let hp = hpss_decompose(&spec, &cfg.hpss()).unwrap();
            let expected = dir.path().join(format!("{id}_expected.npy"));
            io::write_npy_2d(&expected, &hp.recombined()).unwrap();
            let aug = dir.path().join("augmented").join(format!("{id}.npy"));
            assert_eq!(fs::read(&aug).unwrap(), fs::read(&expected).unwrap(), "{id}");
        }
    }

    #[test]
    fn failed_stage_is_flagged_in_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        fs::create_dir_all(&input).unwrap();
        // A segment too short for the STFT window.
        io::write_npy_1d(&input.join("seg_00000.npy"), &[0.1; 16]).unwrap();
        let cfg = RunConfig {
            input_dir: Some(input),
            train_fraction: 1.0,
            val_fraction: 0.0,
            test_fraction: 0.0,
            ..small(&dir.path().join("out"))
        };
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "spectrogram", .. }), "{err}");
        let m: Manifest = io::read_json(&dir.path().join("out").join("manifest.json")).unwrap();
        assert_eq!(m.status, "failed");
        assert!(m.error.unwrap().contains("seg_00000"));
    }
}

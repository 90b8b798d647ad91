//! Synthetic identification-rate benchmark for the template fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dtm_fit, DtmConfig, Theta, IDENTIFICATION_TOLERANCE};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::signal::{add_noise, synthesize_segment, Tone, DEFAULT_DURATION, DEFAULT_SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub fs: f64,
    pub duration: f64,
    pub dtm: DtmConfig,
    pub tone: Option<Tone>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            fs: DEFAULT_SAMPLE_RATE,
            duration: DEFAULT_DURATION,
            dtm: DtmConfig::for_duration(DEFAULT_DURATION),
            tone: None,
        }
    }
}

/// Identification rates at one SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub snr_db: f64,
    pub rate_v1: f64,
    pub rate_v2: f64,
    pub n_trials: usize,
    pub n_converged: usize,
}

#[derive(Debug, Clone, Copy)]
struct Trial {
    hit_v1: bool,
    hit_v2: bool,
    converged: bool,
}

/// Fraction of randomized one-cycle segments whose AO and AC are located
/// within the identification tolerance, per SNR.
///
/// Trial `k` uses the same θ at every SNR, so rows differ only in noise.
/// Trials run in parallel and are reduced in index order.
pub fn dtm_benchmark(snr_grid: &[f64], n_trials: usize, seed: u64, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be >= 1".into()));
    }
    cfg.dtm.validate()?;

    snr_grid
        .iter()
        .enumerate()
        .map(|(si, &snr_db)| {
            let trials: Vec<Trial> = (0..n_trials)
                .into_par_iter()
                .map(|k| run_trial(cfg, snr_db, seed, si as u64, k as u64))
                .collect::<Result<_>>()?;
            let n = trials.len() as f64;
            Ok(BenchRow {
                snr_db,
                rate_v1: trials.iter().filter(|t| t.hit_v1).count() as f64 / n,
                rate_v2: trials.iter().filter(|t| t.hit_v2).count() as f64 / n,
                n_trials,
                n_converged: trials.iter().filter(|t| t.converged).count(),
            })
        })
        .collect()
}

fn run_trial(cfg: &BenchConfig, snr_db: f64, seed: u64, snr_index: u64, k: u64) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, k]));
    let truth = Theta::sample(&cfg.dtm, &mut rng);
    let clean = synthesize_segment(&[truth.cycle(&cfg.dtm.shape)], cfg.fs, cfg.duration)?;
    let noisy = add_noise(&clean, snr_db, derive_seed(seed, &[1, snr_index, k]), cfg.tone)?;
    let fit = dtm_fit(&noisy, &cfg.dtm, derive_seed(seed, &[2, k]))?;
    Ok(Trial {
        hit_v1: (fit.t1 - truth.t1).abs() <= IDENTIFICATION_TOLERANCE,
        hit_v2: (fit.t2 - truth.t2).abs() <= IDENTIFICATION_TOLERANCE,
        converged: fit.converged,
    })
}

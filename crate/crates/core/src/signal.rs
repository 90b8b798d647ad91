//! Two-vibration cardiac displacement model.
//!
//! After respiration removal each cardiac cycle is modelled as two
//! Gaussian-enveloped cosines: the aortic-valve opening (AO, `v1`) and
//! closure (AC, `v2`) vibrations. A segment is the sum of both vibrations
//! over every cycle, sampled on a uniform grid starting at `t = 0`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling rate of a displacement segment, in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 200.0;
/// Default segment length, in seconds.
pub const DEFAULT_DURATION: f64 = 4.0;
/// Upper bound on the AO to AC spacing within one cycle, in seconds.
pub const MAX_AO_AC_GAP: f64 = 0.5;

/// One Gaussian-enveloped cosine burst.
///
/// `value(t) = amplitude * cos(2π f t) * exp(-(t - time_index)² / width²)`.
/// The carrier phase is absolute in `t`; it is not re-anchored at
/// `time_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibrationParams {
    pub amplitude: f64,
    /// Carrier frequency in Hz.
    pub center_freq: f64,
    /// Envelope centre in seconds.
    pub time_index: f64,
    /// Envelope width in seconds.
    pub width: f64,
}

impl VibrationParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite();
        if !(ok(self.amplitude) && ok(self.center_freq) && ok(self.time_index) && ok(self.width)) {
            return Err(Error::InvalidParameter(format!(
                "non-finite vibration parameter: {self:?}"
            )));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if self.center_freq <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "center frequency must be > 0, got {}",
                self.center_freq
            )));
        }
        if self.width <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "width must be > 0, got {}",
                self.width
            )));
        }
        if self.time_index < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "time index must be >= 0, got {}",
                self.time_index
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        let dt = t - self.time_index;
        self.amplitude
            * (2.0 * PI * self.center_freq * t).cos()
            * (-(dt * dt) / (self.width * self.width)).exp()
    }
}

/// AO and AC vibrations of a single cardiac cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleParams {
    pub v1: VibrationParams,
    pub v2: VibrationParams,
}

impl CycleParams {
    /// Reference cycle: AO at 0.4 s / 10 Hz, AC at 0.85 s / 23 Hz.
    pub fn reference() -> Self {
        Self {
            v1: VibrationParams {
                amplitude: 0.5,
                center_freq: 10.0,
                time_index: 0.4,
                width: 0.05,
            },
            v2: VibrationParams {
                amplitude: 0.1,
                center_freq: 23.0,
                time_index: 0.85,
                width: 0.03,
            },
        }
    }

    /// Reference amplitudes and widths with the given timing and carriers.
    pub fn with_timing(t1: f64, t2: f64, f1: f64, f2: f64) -> Self {
        let mut c = Self::reference();
        c.v1.time_index = t1;
        c.v1.center_freq = f1;
        c.v2.time_index = t2;
        c.v2.center_freq = f2;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.v1.validate()?;
        self.v2.validate()?;
        let gap = self.v2.time_index - self.v1.time_index;
        if gap <= 0.0 || gap >= MAX_AO_AC_GAP {
            return Err(Error::InvalidParameter(format!(
                "AC must follow AO by less than {MAX_AO_AC_GAP} s, got gap {gap}"
            )));
        }
        Ok(())
    }
}

/// Uniformly sampled displacement record.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Ground-truth heartbeat times (AO instants), ascending.
    pub beat_times: Option<Vec<f64>>,
}

impl Segment {
    pub fn new(samples: Vec<f64>, sample_rate: f64, beat_times: Option<Vec<f64>>) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be > 0, got {sample_rate}"
            )));
        }
        if let Some(b) = &beat_times {
            if b.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidInput("beat times must be sorted".into()));
            }
        }
        Ok(Self {
            samples,
            sample_rate,
            beat_times,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Time of sample `i` in seconds.
    #[inline]
    pub fn time_of(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    pub fn time_grid(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|i| self.time_of(i)).collect()
    }

    /// Mean power of the samples.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Persistent sinusoidal interferer added on top of white noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq: f64,
    pub amplitude: f64,
}

pub fn synthesize_vibration(p: &VibrationParams, time_grid: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    if time_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(time_grid.iter().map(|&t| p.value_at(t)).collect())
}

/// Sample every vibration of every cycle on `round(fs * duration)` points.
pub fn synthesize_segment(cycles: &[CycleParams], fs: f64, duration: f64) -> Result<Segment> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidParameter(format!("sample rate must be > 0, got {fs}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidParameter(format!("duration must be > 0, got {duration}")));
    }
    for c in cycles {
        c.validate()?;
        for v in [&c.v1, &c.v2] {
            if v.time_index >= duration {
                return Err(Error::InvalidParameter(format!(
                    "time index {} is beyond the segment end {duration}",
                    v.time_index
                )));
            }
        }
    }

    let n = (fs * duration).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            cycles
                .iter()
                .map(|c| c.v1.value_at(t) + c.v2.value_at(t))
                .sum()
        })
        .collect();

    let mut beats: Vec<f64> = cycles.iter().map(|c| c.v1.time_index).collect();
    beats.sort_by(f64::total_cmp);

    Segment::new(samples, fs, Some(beats))
}

/// Add white Gaussian noise at an exact SNR, plus an optional tone.
///
/// The drawn noise vector is rescaled so that its realised power hits the
/// target exactly. `snr_db = +inf` adds no white noise.
pub fn add_noise(s: &Segment, snr_db: f64, seed: u64, tone: Option<Tone>) -> Result<Segment> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    let mut out = s.samples.clone();

    if snr_db.is_finite() && !out.is_empty() {
        let p_signal = s.power();
        if p_signal <= 0.0 {
            return Err(Error::UndefinedSnr);
        }
        let p_target = p_signal / 10f64.powf(snr_db / 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..out.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let scale = (p_target / mean_power(&noise)).sqrt();
        for (x, n) in out.iter_mut().zip(&noise) {
            *x += scale * n;
        }
    }

    if let Some(tone) = tone {
        for (i, x) in out.iter_mut().enumerate() {
            let t = s.time_of(i);
            *x += tone.amplitude * (2.0 * PI * tone.freq * t).cos();
        }
    }

    Ok(Segment {
        samples: out,
        sample_rate: s.sample_rate,
        beat_times: s.beat_times.clone(),
    })
}

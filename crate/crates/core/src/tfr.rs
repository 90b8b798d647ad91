//! Hann-windowed STFT magnitude spectrograms with time/frequency calibration.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub nfft: usize,
    /// Highest frequency kept, in Hz. Bins above it are dropped.
    pub freq_max: f64,
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        let Self {
            win_len,
            hop,
            nfft,
            freq_max,
        } = *self;
        if hop == 0 || hop > win_len || win_len > nfft {
            return Err(Error::InvalidParameter(format!(
                "need 0 < hop <= win_len <= nfft, got hop={hop} win_len={win_len} nfft={nfft}"
            )));
        }
        if !(freq_max >= 0.0) {
            return Err(Error::InvalidParameter(format!("freq_max {freq_max}")));
        }
        Ok(())
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win_len: 64,
            hop: 4,
            nfft: 256,
            freq_max: 50.0,
        }
    }
}

/// Calibration of a spectrogram grid, stored alongside the NPY matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Frames per second.
    pub frame_rate: f64,
    /// Hz per bin.
    pub freq_resolution: f64,
    /// Centre time of frame 0, in seconds.
    pub origin_time: f64,
    /// Frequency of bin 0, in Hz.
    pub origin_freq: f64,
}

/// Non-negative magnitude matrix indexed `[frame, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub calibration: Calibration,
}

impl Spectrogram {
    pub fn new(values: Array2<f64>, calibration: Calibration) -> Result<Self> {
        let (m, n) = values.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput(format!("empty spectrogram {m}x{n}")));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "spectrogram values must be finite and non-negative".into(),
            ));
        }
        let c = &calibration;
        if !(c.frame_rate > 0.0 && c.frame_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("frame rate {}", c.frame_rate)));
        }
        if !(c.freq_resolution > 0.0 && c.freq_resolution.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "frequency resolution {}",
                c.freq_resolution
            )));
        }
        Ok(Self {
            values,
            calibration,
        })
    }

    /// Copy the calibration of `self` onto a new matrix of the same shape.
    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self {
            values,
            calibration: self.calibration,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame_to_time(&self, frame: usize) -> f64 {
        self.calibration.origin_time + frame as f64 / self.calibration.frame_rate
    }

    pub fn bin_to_freq(&self, bin: usize) -> f64 {
        self.calibration.origin_freq + bin as f64 * self.calibration.freq_resolution
    }

    fn frame_position(&self, t: f64) -> f64 {
        ((t - self.calibration.origin_time) * self.calibration.frame_rate).round()
    }

    fn bin_position(&self, f: f64) -> f64 {
        ((f - self.calibration.origin_freq) / self.calibration.freq_resolution).round()
    }

    /// Nearest frame to `t`; errors if `t` falls outside the frame grid.
    pub fn time_to_frame(&self, t: f64) -> Result<usize> {
        let m = self.frame_position(t);
        if !(m >= 0.0 && m < self.n_frames() as f64) {
            return Err(Error::OutOfRange {
                what: "time",
                value: t,
                lo: self.frame_to_time(0),
                hi: self.frame_to_time(self.n_frames() - 1),
            });
        }
        Ok(m as usize)
    }

    /// Nearest bin to `f`; errors if `f` falls outside the bin grid.
    pub fn freq_to_bin(&self, f: f64) -> Result<usize> {
        let n = self.bin_position(f);
        if !(n >= 0.0 && n < self.n_bins() as f64) {
            return Err(Error::OutOfRange {
                what: "frequency",
                value: f,
                lo: self.bin_to_freq(0),
                hi: self.bin_to_freq(self.n_bins() - 1),
            });
        }
        Ok(n as usize)
    }

    /// Nearest frame to `t`, clamped onto the grid.
    pub fn time_to_frame_clamped(&self, t: f64) -> usize {
        self.frame_position(t).clamp(0.0, (self.n_frames() - 1) as f64) as usize
    }

    /// Nearest bin to `f`, clamped onto the grid.
    pub fn freq_to_bin_clamped(&self, f: f64) -> usize {
        self.bin_position(f).clamp(0.0, (self.n_bins() - 1) as f64) as usize
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Magnitude STFT of a segment, cropped to `[0, cfg.freq_max]`.
///
/// Frames are not padded, so `M = (len - win_len) / hop + 1`. Frame `m`
/// spans samples `[m*hop, m*hop + win_len)` and is timestamped at its
/// window centre.
pub fn spectrogram(s: &Segment, cfg: &StftConfig) -> Result<Spectrogram> {
    let StftConfig {
        win_len,
        hop,
        nfft,
        freq_max,
    } = *cfg;
    cfg.validate()?;
    if s.len() < win_len || s.len() < nfft {
        return Err(Error::InsufficientData {
            needed: nfft.max(win_len),
            got: s.len(),
        });
    }

    let fs = s.sample_rate;
    let df = fs / nfft as f64;
    let n_bins = ((freq_max / df).floor() as usize + 1).min(nfft / 2 + 1);
    let n_frames = (s.len() - win_len) / hop + 1;

    let window = hann(win_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Array2::<f64>::zeros((n_frames, n_bins));

    for (m, mut row) in values.rows_mut().into_iter().enumerate() {
        let start = m * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (k, (&x, &w)) in s.samples[start..start + win_len].iter().zip(&window).enumerate() {
            buf[k] = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (v, c) in row.iter_mut().zip(&buf) {
            *v = c.norm();
        }
    }

    Spectrogram::new(
        values,
        Calibration {
            frame_rate: fs / hop as f64,
            freq_resolution: df,
            origin_time: win_len as f64 / (2.0 * fs),
            origin_freq: 0.0,
        },
    )
}

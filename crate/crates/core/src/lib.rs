//! Harmonic/percussive spectrogram augmentation for radar cardiac
//! monitoring.
//!
//! The crate covers the full path from a displacement segment to an
//! augmented training spectrogram:
//!
//! - [`signal`]: two-vibration cardiac model and noise injection
//! - [`tfr`]: STFT magnitude spectrograms with axis calibration
//! - [`hpss`]: median-filter harmonic/percussive decomposition
//! - [`dtm`]: constrained template matching for AO/AC localisation
//! - [`augment`]: zero-masking of the harmonic component
//! - [`metrics`]: RMSE, PCC, heartbeat error, miss rate and Δm%
//! - [`pipeline`]: on-disk dataset synthesis, splits and full runs

pub mod augment;
pub mod dtm;
pub mod error;
pub mod hpss;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod seeds;
pub mod signal;
pub mod tfr;

pub use error::{Error, Result};

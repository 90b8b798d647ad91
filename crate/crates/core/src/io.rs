//! On-disk formats: little-endian float32 NPY arrays with JSON sidecars.
//!
//! A segment `seg_00001.npy` carries its sample rate and ground truth in
//! `seg_00001.json`; a spectrogram carries its axis calibration the same way.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use npyz::{DType, Order, WriterBuilder};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{CycleParams, Segment};
use crate::tfr::{Calibration, Spectrogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSidecar {
    pub fs: f64,
    pub duration: f64,
    #[serde(default)]
    pub beat_times: Option<Vec<f64>>,
    #[serde(default)]
    pub cycle_params: Vec<CycleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

/// Path of the JSON sidecar next to an NPY file.
pub fn sidecar_path(npy: &Path) -> PathBuf {
    npy.with_extension("json")
}

fn npy_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Npy {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_f32(path: &Path, shape: &[u64], values: impl Iterator<Item = f64>) -> Result<()> {
    let file = create(path)?;
    let mut w = npyz::WriteOptions::<f32>::new()
        .dtype(DType::Plain("<f4".parse().expect("valid type string")))
        .shape(shape)
        .writer(file)
        .begin_nd()
        .map_err(|e| Error::io(path, e))?;
    w.extend(values.map(|v| v as f32)).map_err(|e| Error::io(path, e))?;
    w.finish().map_err(|e| Error::io(path, e))
}

pub fn write_npy_1d(path: &Path, values: &[f64]) -> Result<()> {
    write_f32(path, &[values.len() as u64], values.iter().copied())
}

/// Row-major float32 matrix.
pub fn write_npy_2d(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (m, n) = values.dim();
    write_f32(path, &[m as u64, n as u64], values.rows().into_iter().flat_map(|r| r.to_vec()))
}

/// Read a float32 or float64 C-order array as `(shape, values)`.
pub fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let npy = npyz::NpyFile::new(BufReader::new(file)).map_err(|e| npy_err(path, e.to_string()))?;
    if npy.order() != Order::C {
        return Err(npy_err(path, "Fortran order is not supported"));
    }
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let DType::Plain(ts) = npy.dtype() else {
        return Err(npy_err(path, "structured dtypes are not supported"));
    };
    let values: Vec<f64> = match ts.to_string().as_str() {
        "<f4" | ">f4" => npy
            .into_vec::<f32>()
            .map_err(|e| npy_err(path, e.to_string()))?
            .into_iter()
            .map(f64::from)
            .collect(),
        "<f8" | ">f8" => npy.into_vec::<f64>().map_err(|e| npy_err(path, e.to_string()))?,
        other => return Err(npy_err(path, format!("unsupported dtype {other}"))),
    };
    Ok((shape, values))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
}

/// Write `segment` to `path` (NPY) and its sidecar.
pub fn save_segment(path: &Path, segment: &Segment, cycles: &[CycleParams], snr_db: Option<f64>) -> Result<()> {
    write_npy_1d(path, &segment.samples)?;
    write_json(
        &sidecar_path(path),
        &SegmentSidecar {
            fs: segment.sample_rate,
            duration: segment.duration(),
            beat_times: segment.beat_times.clone(),
            cycle_params: cycles.to_vec(),
            snr_db,
        },
    )
}

/// Load a segment NPY. The sidecar supplies the sample rate; without one,
/// `fallback_fs` is used.
pub fn load_segment(path: &Path, fallback_fs: Option<f64>) -> Result<(Segment, Option<SegmentSidecar>)> {
    let (shape, samples) = read_npy(path)?;
    if shape.len() != 1 {
        return Err(npy_err(path, format!("expected a 1-D array, got shape {shape:?}")));
    }
    let side_path = sidecar_path(path);
    let sidecar: Option<SegmentSidecar> = if side_path.exists() {
        Some(read_json(&side_path)?)
    } else {
        None
    };
    let fs = sidecar
        .as_ref()
        .map(|s| s.fs)
        .or(fallback_fs)
        .ok_or_else(|| Error::InvalidInput(format!("{}: no sidecar and no sample rate given", path.display())))?;
    let beats = sidecar.as_ref().and_then(|s| s.beat_times.clone());
    let segment = Segment::new(samples, fs, beats)?;
    Ok((segment, sidecar))
}

pub fn save_spectrogram(path: &Path, spec: &Spectrogram) -> Result<()> {
    write_npy_2d(path, &spec.values)?;
    write_json(&sidecar_path(path), &spec.calibration)
}

pub fn save_matrix(path: &Path, values: &Array2<f64>) -> Result<()> {
    write_npy_2d(path, values)
}

/// Load a spectrogram NPY with its calibration sidecar, or `fallback` when
/// the sidecar is missing.
pub fn load_spectrogram(path: &Path, fallback: Option<Calibration>) -> Result<Spectrogram> {
    let (shape, values) = read_npy(path)?;
    let [m, n] = shape[..] else {
        return Err(npy_err(path, format!("expected a 2-D array, got shape {shape:?}")));
    };
    let values = Array2::from_shape_vec((m, n), values).map_err(|e| npy_err(path, e.to_string()))?;
    let side_path = sidecar_path(path);
    let calibration = if side_path.exists() {
        read_json(&side_path)?
    } else {
        fallback.ok_or_else(|| Error::InvalidInput(format!("{}: no calibration sidecar", path.display())))?
    };
    Spectrogram::new(values, calibration)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::synthesize_segment;
    use crate::tfr::{spectrogram, StftConfig};

    #[test]
    fn segment_round_trip_through_float32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg_00000.npy");
        let cycles = [CycleParams::reference()];
        let seg = synthesize_segment(&cycles, 200.0, 4.0).unwrap();
        save_segment(&path, &seg, &cycles, None).unwrap();

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"\x93NUMPY");
        let header = String::from_utf8_lossy(&bytes[..128]);
        assert!(header.contains("'<f4'"), "{header}");

        let (back, side) = load_segment(&path, None).unwrap();
        assert_eq!(back.sample_rate, 200.0);
        assert_eq!(back.beat_times, Some(vec![0.4]));
        assert_eq!(side.unwrap().cycle_params, cycles.to_vec());
        for (a, b) in back.samples.iter().zip(&seg.samples) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn spectrogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.npy");
        let seg = synthesize_segment(&[CycleParams::reference()], 200.0, 4.0).unwrap();
        let spec = spectrogram(&seg, &StftConfig::default()).unwrap();
        save_spectrogram(&path, &spec).unwrap();
        let back = load_spectrogram(&path, None).unwrap();
        assert_eq!(back.values.dim(), spec.values.dim());
        assert_eq!(back.calibration, spec.calibration);
    }

    #[test]
    fn missing_sample_rate_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.npy");
        write_npy_1d(&path, &[0.0, 1.0]).unwrap();
        assert!(load_segment(&path, None).is_err());
        assert_eq!(load_segment(&path, Some(100.0)).unwrap().0.sample_rate, 100.0);
    }

    #[test]
    fn garbage_is_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.npy");
        fs::write(&path, b"not an npy file").unwrap();
        let err = read_npy(&path).unwrap_err();
        assert!(err.to_string().contains("bad.npy"));
    }
}

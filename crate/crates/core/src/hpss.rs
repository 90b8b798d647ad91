//! Harmonic/percussive decomposition by axis-wise median filtering and
//! Wiener soft masks.
//!
//! The time-axis median keeps horizontal ridges (stable carriers), the
//! frequency-axis median keeps vertical ridges (pulsatile beats). Each cell
//! of the input is then split between the two components in proportion to
//! the enhanced magnitudes, so the components always add back to the input.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tfr::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterAxis {
    /// Along frames (rows of the matrix), one run per frequency bin.
    Time,
    /// Along bins, one run per frame.
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HpssConfig {
    /// Median length along time, in frames.
    pub k_h: usize,
    /// Median length along frequency, in bins.
    pub k_p: usize,
}

impl HpssConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k_h", self.k_h), ("k_p", self.k_p)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be odd and >= 1, got {k}")));
            }
        }
        Ok(())
    }
}

impl Default for HpssConfig {
    fn default() -> Self {
        Self { k_h: 17, k_p: 17 }
    }
}

#[derive(Debug, Clone)]
pub struct HpssResult {
    pub harmonic: Spectrogram,
    pub percussive: Spectrogram,
    pub mask_h: Array2<f64>,
    pub mask_p: Array2<f64>,
    /// Time-median enhanced matrix.
    pub enhanced_h: Array2<f64>,
    /// Frequency-median enhanced matrix.
    pub enhanced_p: Array2<f64>,
}

impl HpssResult {
    /// `harmonic + percussive`, cell by cell.
    pub fn recombined(&self) -> Array2<f64> {
        &self.harmonic.values + &self.percussive.values
    }
}

/// Index into `0..n` after mirroring about the end samples (no edge repeat).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

fn median_run(input: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, k: usize, window: &mut Vec<f64>) {
    let n = input.len();
    let half = (k / 2) as isize;
    for i in 0..n {
        window.clear();
        window.extend((-half..=half).map(|d| input[reflect(i as isize + d, n)]));
        let (_, mid, _) = window.select_nth_unstable_by(k / 2, f64::total_cmp);
        out[i] = *mid;
    }
}

/// Running median of odd length `k` along one axis with reflect padding.
pub fn median_filter_axis(values: &Array2<f64>, k: usize, axis: FilterAxis) -> Result<Array2<f64>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "median window must be odd and >= 1, got {k}"
        )));
    }
    let mut out = Array2::<f64>::zeros(values.dim());
    // Time runs down a column; frequency runs along a row.
    let ax = match axis {
        FilterAxis::Time => Axis(1),
        FilterAxis::Frequency => Axis(0),
    };
    let lanes_in: Vec<_> = values.axis_iter(ax).collect();
    let lanes_out: Vec<_> = out.axis_iter_mut(ax).collect();
    lanes_in
        .into_par_iter()
        .zip(lanes_out)
        .for_each_init(|| Vec::with_capacity(k), |buf, (src, dst)| median_run(src, dst, k, buf));
    Ok(out)
}

pub fn hpss_decompose(y: &Spectrogram, cfg: &HpssConfig) -> Result<HpssResult> {
    cfg.validate()?;
    if y.values.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("spectrogram has negative or NaN cells".into()));
    }
    let enhanced_h = median_filter_axis(&y.values, cfg.k_h, FilterAxis::Time)?;
    let enhanced_p = median_filter_axis(&y.values, cfg.k_p, FilterAxis::Frequency)?;

    let mut mask_h = Array2::<f64>::zeros(y.values.dim());
    let mut mask_p = Array2::<f64>::zeros(y.values.dim());
    Zip::from(&mut mask_h)
        .and(&mut mask_p)
        .and(&enhanced_h)
        .and(&enhanced_p)
        .for_each(|mh, mp, &h, &p| {
            let total = h + p;
            if total > 0.0 {
                *mh = h / total;
                *mp = p / total;
            } else {
                *mh = 0.5;
                *mp = 0.5;
            }
        });

    let harmonic = y.with_values(&mask_h * &y.values);
    let percussive = y.with_values(&mask_p * &y.values);

    Ok(HpssResult {
        harmonic,
        percussive,
        mask_h,
        mask_p,
        enhanced_h,
        enhanced_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tfr::Calibration;
    use ndarray::array;
    use proptest::prelude::*;

    fn cal() -> Calibration {
        Calibration {
            frame_rate: 50.0,
            freq_resolution: 0.78125,
            origin_time: 0.0,
            origin_freq: 0.0,
        }
    }

    // Rows of a 1xN matrix run along frequency.
    fn filter_row(row: &[f64], k: usize) -> Vec<f64> {
        let m = Array2::from_shape_vec((1, row.len()), row.to_vec()).unwrap();
        median_filter_axis(&m, k, FilterAxis::Frequency).unwrap().into_raw_vec_and_offset().0
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-2..7).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![2, 1, 0, 1, 2, 3, 4, 3, 2]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn isolated_spike_removed() {
        assert_eq!(filter_row(&[0.0, 0.0, 5.0, 0.0, 0.0], 3), vec![0.0; 5]);
    }

    #[test]
    fn hand_computed_medians() {
        // Padded row is [2, 1, 2, 100, 3, 4, 3].
        assert_eq!(filter_row(&[1.0, 2.0, 100.0, 3.0, 4.0], 3), vec![2.0, 2.0, 3.0, 4.0, 3.0]);
    }

    #[test]
    fn constant_matrix_unchanged() {
        let m = Array2::from_elem((7, 9), 2.5);
        for axis in [FilterAxis::Time, FilterAxis::Frequency] {
            assert_eq!(median_filter_axis(&m, 5, axis).unwrap(), m);
        }
    }

    #[test]
    fn even_window_rejected() {
        let m = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            median_filter_axis(&m, 4, FilterAxis::Time),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn time_axis_runs_down_columns() {
        let m = array![[0.0, 1.0], [0.0, 1.0], [9.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let out = median_filter_axis(&m, 3, FilterAxis::Time).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![0.0; 5]);
        assert_eq!(out.column(1).to_vec(), vec![1.0; 5]);
    }

    #[test]
    fn line_images_separate() {
        let (m, n) = (120, 65);
        let mut horiz = Array2::<f64>::zeros((m, n));
        horiz.column_mut(13).fill(1.0);
        let r = hpss_decompose(&Spectrogram::new(horiz, cal()).unwrap(), &HpssConfig::default()).unwrap();
        let mean_h = r.mask_h.column(13).mean().unwrap();
        assert!(mean_h >= 0.9, "{mean_h}");

        let mut vert = Array2::<f64>::zeros((m, n));
        vert.row_mut(40).fill(1.0);
        let r = hpss_decompose(&Spectrogram::new(vert, cal()).unwrap(), &HpssConfig::default()).unwrap();
        let mean_p = r.mask_p.row(40).mean().unwrap();
        assert!(mean_p >= 0.9, "{mean_p}");
    }

    #[test]
    fn zero_cells_split_evenly() {
        let y = Spectrogram::new(Array2::zeros((4, 4)), cal()).unwrap();
        let r = hpss_decompose(&y, &HpssConfig { k_h: 3, k_p: 3 }).unwrap();
        assert!(r.mask_h.iter().all(|&v| v == 0.5));
        assert!(r.mask_p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_in_time_is_mostly_harmonic() {
        let mut y = Array2::<f64>::zeros((30, 20));
        for (j, mut col) in y.columns_mut().into_iter().enumerate() {
            col.fill((j as f64 * 0.7).sin().abs() + 0.1);
        }
        let r = hpss_decompose(&Spectrogram::new(y.clone(), cal()).unwrap(), &HpssConfig { k_h: 5, k_p: 5 }).unwrap();
        assert_eq!(r.enhanced_h, y);
        // Valleys along frequency can still lean percussive.
        for ((&mh, &v), &p) in r.mask_h.iter().zip(&y).zip(&r.enhanced_p) {
            if v >= p {
                assert!(mh >= 0.5);
            }
        }
    }

    fn matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..24, 1usize..24).prop_flat_map(|(m, n)| {
            proptest::collection::vec(0.0f64..10.0, m * n)
                .prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn masks_partition_unity_and_reconstruct(y in matrix(), kh in 0usize..5, kp in 0usize..5) {
            let cfg = HpssConfig { k_h: 2 * kh + 1, k_p: 2 * kp + 1 };
            let spec = Spectrogram::new(y.clone(), cal()).unwrap();
            let r = hpss_decompose(&spec, &cfg).unwrap();
            for (&mh, &mp) in r.mask_h.iter().zip(&r.mask_p) {
                prop_assert!((0.0..=1.0).contains(&mh) && (0.0..=1.0).contains(&mp));
                prop_assert!((mh + mp - 1.0).abs() <= 1e-12);
            }
            let rec = r.recombined();
            for (&a, &b) in rec.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-300));
            }
        }

        #[test]
        fn masks_scale_invariant(y in matrix(), c in 0.01f64..100.0) {
            let cfg = HpssConfig { k_h: 3, k_p: 5 };
            let a = hpss_decompose(&Spectrogram::new(y.clone(), cal()).unwrap(), &cfg).unwrap();
            let b = hpss_decompose(&Spectrogram::new(&y * c, cal()).unwrap(), &cfg).unwrap();
            for (x, z) in a.mask_h.iter().zip(&b.mask_h) {
                prop_assert!((x - z).abs() <= 1e-12);
            }
        }
    }
}

//! Zero-mask augmentation of the harmonic component.
//!
//! One vibration of the fitted cycle is picked at random and a band of
//! frames, bins, or both around it is cleared in the harmonic spectrogram.
//! Adding the percussive spectrogram back keeps the beat onsets intact.

use std::ops::RangeInclusive;

use ndarray::{s, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtm::FittedTheta;
use crate::error::{Error, Result};
use crate::hpss::HpssResult;
use crate::tfr::Spectrogram;

pub const DEFAULT_W_T: usize = 24;
pub const DEFAULT_W_F: usize = 12;

/// Guards `floor(p·N)` against `p·N` landing just below an integer.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskDomain {
    Time,
    Frequency,
    Both,
}

impl MaskDomain {
    pub const ALL: [MaskDomain; 3] = [MaskDomain::Time, MaskDomain::Frequency, MaskDomain::Both];

    fn has_time(self) -> bool {
        matches!(self, MaskDomain::Time | MaskDomain::Both)
    }

    fn has_freq(self) -> bool {
        matches!(self, MaskDomain::Frequency | MaskDomain::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Centred on the fitted vibration.
    Dtm,
    /// Centred uniformly at random on the grid.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vibration {
    V1,
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub domain: MaskDomain,
    /// Placement actually used, which is `Random` after a fallback.
    pub placement: Placement,
    pub target_vibration: Vibration,
    pub center_frame: Option<usize>,
    pub center_bin: Option<usize>,
    pub w_t: usize,
    pub w_f: usize,
}

/// `[c − w/2, c − w/2 + w − 1]` clipped to `0..n`; `None` when empty.
fn band(center: usize, width: usize, n: usize) -> Option<RangeInclusive<usize>> {
    if width == 0 || n == 0 {
        return None;
    }
    let start = center as isize - (width / 2) as isize;
    let end = start + width as isize - 1;
    let lo = start.max(0);
    let hi = end.min(n as isize - 1);
    (lo <= hi).then(|| lo as usize..=hi as usize)
}

impl MaskSpec {
    /// Frames cleared by the time band, if any.
    pub fn time_band(&self, n_frames: usize) -> Option<RangeInclusive<usize>> {
        self.center_frame.and_then(|c| band(c, self.w_t, n_frames))
    }

    /// Bins cleared by the frequency band, if any.
    pub fn freq_band(&self, n_bins: usize) -> Option<RangeInclusive<usize>> {
        self.center_bin.and_then(|c| band(c, self.w_f, n_bins))
    }

    pub fn contains(&self, frame: usize, bin: usize, dim: (usize, usize)) -> bool {
        self.time_band(dim.0).is_some_and(|b| b.contains(&frame))
            || self.freq_band(dim.1).is_some_and(|b| b.contains(&bin))
    }

    /// Number of cells cleared on a `dim` grid.
    pub fn masked_cells(&self, dim: (usize, usize)) -> usize {
        let (m, n) = dim;
        let t = self.time_band(m).map_or(0, |b| b.count());
        let f = self.freq_band(n).map_or(0, |b| b.count());
        t * n + f * m - t * f
    }

    /// Check widths, centres and that exactly the fields implied by the
    /// domain are set.
    pub fn validate(&self, dim: (usize, usize)) -> Result<()> {
        if self.w_t == 0 || self.w_f == 0 {
            return Err(Error::InvalidParameter("mask widths must be >= 1".into()));
        }
        if self.domain.has_time() != self.center_frame.is_some() || self.domain.has_freq() != self.center_bin.is_some() {
            return Err(Error::InvalidParameter(format!(
                "mask centres do not match domain {:?}",
                self.domain
            )));
        }
        if self.center_frame.is_some_and(|c| c >= dim.0) || self.center_bin.is_some_and(|c| c >= dim.1) {
            return Err(Error::InvalidParameter(format!("mask centre outside a {}x{} grid", dim.0, dim.1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugPolicy {
    /// Fraction of segments to augment.
    pub proportion: f64,
    pub domain: MaskDomain,
    pub placement: Placement,
    pub seed: u64,
    #[serde(default = "default_w_t")]
    pub w_t: usize,
    #[serde(default = "default_w_f")]
    pub w_f: usize,
}

fn default_w_t() -> usize {
    DEFAULT_W_T
}

fn default_w_f() -> usize {
    DEFAULT_W_F
}

impl Default for AugPolicy {
    fn default() -> Self {
        Self {
            proportion: 0.2,
            domain: MaskDomain::Both,
            placement: Placement::Dtm,
            seed: 0,
            w_t: DEFAULT_W_T,
            w_f: DEFAULT_W_F,
        }
    }
}

impl AugPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.proportion) {
            return Err(Error::OutOfRange {
                what: "augmentation proportion",
                value: self.proportion,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if self.w_t == 0 || self.w_f == 0 {
            return Err(Error::InvalidParameter("mask widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Short name such as `dtm-both`.
    pub fn label(&self) -> String {
        let p = match self.placement {
            Placement::Dtm => "dtm",
            Placement::Random => "random",
        };
        let d = match self.domain {
            MaskDomain::Time => "time",
            MaskDomain::Frequency => "frequency",
            MaskDomain::Both => "both",
        };
        format!("{p}-{d}")
    }

    /// The six placement × domain combinations, other fields from `self`.
    pub fn ablations(&self) -> Vec<AugPolicy> {
        [Placement::Random, Placement::Dtm]
            .into_iter()
            .flat_map(|placement| {
                MaskDomain::ALL.into_iter().map(move |domain| AugPolicy {
                    placement,
                    domain,
                    ..*self
                })
            })
            .collect()
    }

    /// How many of `n` segments get augmented.
    pub fn n_selected(&self, n: usize) -> usize {
        ((self.proportion * n as f64 + FLOOR_EPS).floor() as usize).min(n)
    }
}

/// Choose the vibration and place the mask.
///
/// DTM placement needs a usable fit. With no fit, or a degenerate one
/// (not converged, or explaining almost none of the segment), the mask is
/// placed at random instead and a warning is logged.
pub fn build_mask<R: Rng + ?Sized>(
    theta: Option<&FittedTheta>,
    spec: &Spectrogram,
    policy: &AugPolicy,
    rng: &mut R,
) -> Result<MaskSpec> {
    policy.validate()?;
    let target = if rng.random_bool(0.5) { Vibration::V1 } else { Vibration::V2 };
    let usable = theta.filter(|t| !t.is_degenerate());
    let placement = match (policy.placement, usable) {
        (Placement::Dtm, None) => {
            log::warn!("template fit unusable, placing mask at random");
            Placement::Random
        }
        (p, _) => p,
    };

    let (frame, bin) = match (placement, usable) {
        (Placement::Dtm, Some(th)) => {
            let (t, f) = match target {
                Vibration::V1 => (th.t1, th.f1),
                Vibration::V2 => (th.t2, th.f2),
            };
            (spec.time_to_frame_clamped(t), spec.freq_to_bin_clamped(f))
        }
        _ => (rng.random_range(0..spec.n_frames()), rng.random_range(0..spec.n_bins())),
    };

    Ok(MaskSpec {
        domain: policy.domain,
        placement,
        target_vibration: target,
        center_frame: policy.domain.has_time().then_some(frame),
        center_bin: policy.domain.has_freq().then_some(bin),
        w_t: policy.w_t,
        w_f: policy.w_f,
    })
}

/// Zero the masked cells of the harmonic component and add the percussive
/// component back.
pub fn augment_spectrogram(y: &Spectrogram, hpss: &HpssResult, mask: &MaskSpec) -> Result<Spectrogram> {
    let dim = y.values.dim();
    if hpss.harmonic.values.dim() != dim || hpss.percussive.values.dim() != dim {
        return Err(Error::InvalidInput(format!(
            "decomposition shape {:?} does not match spectrogram {:?}",
            hpss.harmonic.values.dim(),
            dim
        )));
    }
    if mask.center_frame.is_some_and(|c| c >= dim.0) || mask.center_bin.is_some_and(|c| c >= dim.1) {
        return Err(Error::InvalidInput(format!("mask centre outside a {}x{} grid", dim.0, dim.1)));
    }
    let mut h: Array2<f64> = hpss.harmonic.values.clone();
    if let Some(b) = mask.time_band(dim.0) {
        h.slice_mut(s![b, ..]).fill(0.0);
    }
    if let Some(b) = mask.freq_band(dim.1) {
        h.slice_mut(s![.., b]).fill(0.0);
    }
    h += &hpss.percussive.values;
    Ok(y.with_values(h))
}

/// One segment ready for augmentation.
#[derive(Debug, Clone, Copy)]
pub struct SegmentInput<'a> {
    pub spectrogram: &'a Spectrogram,
    pub hpss: &'a HpssResult,
    pub theta: Option<&'a FittedTheta>,
}

#[derive(Debug, Clone)]
pub struct AugmentedSegment {
    pub augmented: bool,
    pub mask_spec: Option<MaskSpec>,
    pub output: Spectrogram,
}

/// Indices of the segments to augment, ascending.
pub fn select_segments(n: usize, policy: &AugPolicy) -> Result<Vec<usize>> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut picked = sample(&mut rng, n, policy.n_selected(n)).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Augment `floor(p·N)` segments chosen without replacement.
///
/// Segment `i` draws its mask from a generator seeded with `seed ^ i`, so
/// the result does not depend on processing order. Unselected segments are
/// returned as the recombined `harmonic + percussive`.
pub fn augment_dataset(inputs: &[SegmentInput<'_>], policy: &AugPolicy) -> Result<Vec<AugmentedSegment>> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no segments to augment".into()));
    }
    let picked = select_segments(inputs.len(), policy)?;
    let mut selected = vec![false; inputs.len()];
    for i in picked {
        selected[i] = true;
    }
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, seg)| {
            if !selected[i] {
                return Ok(AugmentedSegment {
                    augmented: false,
                    mask_spec: None,
                    output: seg.spectrogram.with_values(seg.hpss.recombined()),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed ^ i as u64);
            let mask = build_mask(seg.theta, seg.spectrogram, policy, &mut rng)?;
            let output = augment_spectrogram(seg.spectrogram, seg.hpss, &mask)?;
            Ok(AugmentedSegment {
                augmented: true,
                mask_spec: Some(mask),
                output,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpss::{hpss_decompose, HpssConfig};
    use crate::tfr::Calibration;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn origin_zero(m: usize, n: usize) -> Spectrogram {
        let values = Array2::from_shape_fn((m, n), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.5);
        Spectrogram::new(
            values,
            Calibration {
                frame_rate: 50.0,
                freq_resolution: 0.78125,
                origin_time: 0.0,
                origin_freq: 0.0,
            },
        )
        .unwrap()
    }

    fn fitted(t1: f64, t2: f64, f1: f64, f2: f64) -> FittedTheta {
        FittedTheta {
            t1,
            t2,
            f1,
            f2,
            residual_norm: 0.0,
            converged: true,
            n_evals: 1,
            signal_norm: 1.0,
        }
    }

    fn mask(domain: MaskDomain, frame: usize, bin: usize) -> MaskSpec {
        MaskSpec {
            domain,
            placement: Placement::Dtm,
            target_vibration: Vibration::V1,
            center_frame: domain.has_time().then_some(frame),
            center_bin: domain.has_freq().then_some(bin),
            w_t: DEFAULT_W_T,
            w_f: DEFAULT_W_F,
        }
    }

    #[test]
    fn dtm_bands_around_the_fitted_vibration() {
        let spec = origin_zero(185, 65);
        let th = fitted(0.4, 0.85, 10.0, 23.0);
        let policy = AugPolicy {
            domain: MaskDomain::Both,
            ..AugPolicy::default()
        };
        // Draw until v1 is picked; the seed stream is fixed so this is stable.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = loop {
            let m = build_mask(Some(&th), &spec, &policy, &mut rng).unwrap();
            if m.target_vibration == Vibration::V1 {
                break m;
            }
        };
        assert_eq!(m.center_frame, Some(20));
        assert_eq!(m.center_bin, Some(13));
        assert_eq!(m.time_band(185), Some(8..=31));
        assert_eq!(m.freq_band(65), Some(7..=18));
    }

    #[test]
    fn same_seed_same_mask() {
        let spec = origin_zero(40, 30);
        let th = fitted(0.4, 0.6, 10.0, 20.0);
        for placement in [Placement::Dtm, Placement::Random] {
            let policy = AugPolicy {
                placement,
                ..AugPolicy::default()
            };
            let a = build_mask(Some(&th), &spec, &policy, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let b = build_mask(Some(&th), &spec, &policy, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unconverged_fit_falls_back_to_random() {
        let spec = origin_zero(40, 30);
        let mut th = fitted(0.4, 0.6, 10.0, 20.0);
        th.converged = false;
        let m = build_mask(Some(&th), &spec, &AugPolicy::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.placement, Placement::Random);
        let m = build_mask(None, &spec, &AugPolicy::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.placement, Placement::Random);
        m.validate(spec.values.dim()).unwrap();
    }

    #[test]
    fn only_domain_fields_are_set() {
        let spec = origin_zero(40, 30);
        let th = fitted(0.4, 0.6, 10.0, 20.0);
        for domain in MaskDomain::ALL {
            let policy = AugPolicy {
                domain,
                ..AugPolicy::default()
            };
            let m = build_mask(Some(&th), &spec, &policy, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(m.center_frame.is_some(), domain != MaskDomain::Frequency);
            assert_eq!(m.center_bin.is_some(), domain != MaskDomain::Time);
            m.validate(spec.values.dim()).unwrap();
        }
    }

    #[test]
    fn bands_clip_at_the_border() {
        assert_eq!(band(0, 24, 185), Some(0..=11));
        assert_eq!(band(184, 24, 185), Some(172..=184));
        assert_eq!(band(3, 0, 10), None);
        assert_eq!(band(2, 1, 10), Some(2..=2));
    }

    #[test]
    fn time_band_leaves_only_percussive() {
        let spec = origin_zero(60, 40);
        let hp = hpss_decompose(&spec, &HpssConfig::default()).unwrap();
        let m = mask(MaskDomain::Time, 30, 0);
        let out = augment_spectrogram(&spec, &hp, &m).unwrap();
        for f in 18..=41 {
            assert_eq!(out.values.row(f), hp.percussive.values.row(f));
        }
        assert_eq!(out.values.row(17), hp.recombined().row(17));
    }

    #[test]
    fn empty_mask_returns_the_input() {
        let spec = origin_zero(60, 40);
        let hp = hpss_decompose(&spec, &HpssConfig::default()).unwrap();
        let mut m = mask(MaskDomain::Both, 10, 10);
        m.w_t = 0;
        m.w_f = 0;
        let out = augment_spectrogram(&spec, &hp, &m).unwrap();
        for (a, b) in out.values.iter().zip(spec.values.iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = origin_zero(60, 40);
        let other = origin_zero(50, 40);
        let hp = hpss_decompose(&other, &HpssConfig::default()).unwrap();
        assert!(augment_spectrogram(&spec, &hp, &mask(MaskDomain::Time, 5, 5)).is_err());
    }

    #[test]
    fn inclusion_exclusion_count() {
        let m = mask(MaskDomain::Both, 50, 30);
        assert_eq!(m.masked_cells((185, 65)), 24 * 65 + 12 * 185 - 24 * 12);
    }

    #[test]
    fn selection_counts() {
        let p0 = AugPolicy {
            proportion: 0.0,
            ..AugPolicy::default()
        };
        assert!(select_segments(90, &p0).unwrap().is_empty());
        let p = AugPolicy {
            proportion: 0.2,
            ..AugPolicy::default()
        };
        assert_eq!(select_segments(90, &p).unwrap().len(), 18);
        assert_eq!(select_segments(90, &p).unwrap(), select_segments(90, &p).unwrap());
        // 0.29·100 is 28.999999999999996 in floating point.
        let p29 = AugPolicy {
            proportion: 0.29,
            ..AugPolicy::default()
        };
        assert_eq!(p29.n_selected(100), 29);
        let bad = AugPolicy {
            proportion: 1.5,
            ..AugPolicy::default()
        };
        assert!(select_segments(10, &bad).is_err());
    }

    #[test]
    fn six_distinct_ablations() {
        let all = AugPolicy::default().ablations();
        assert_eq!(all.len(), 6);
        let labels: std::collections::HashSet<_> = all.iter().map(|p| p.label()).collect();
        assert_eq!(labels.len(), 6);
    }

    #[test]
    fn dataset_is_reproducible_and_unselected_are_recombined() {
        let specs: Vec<Spectrogram> = (0..10).map(|k| origin_zero(40 + k, 30)).collect();
        let hps: Vec<HpssResult> = specs
            .iter()
            .map(|s| hpss_decompose(s, &HpssConfig::default()).unwrap())
            .collect();
        let th = fitted(0.3, 0.5, 10.0, 20.0);
        let inputs: Vec<SegmentInput> = specs
            .iter()
            .zip(&hps)
            .map(|(s, h)| SegmentInput {
                spectrogram: s,
                hpss: h,
                theta: Some(&th),
            })
            .collect();
        let policy = AugPolicy {
            proportion: 0.3,
            seed: 11,
            ..AugPolicy::default()
        };
        let a = augment_dataset(&inputs, &policy).unwrap();
        let b = augment_dataset(&inputs, &policy).unwrap();
        assert_eq!(a.iter().filter(|s| s.augmented).count(), 3);
        for ((x, y), h) in a.iter().zip(&b).zip(&hps) {
            assert_eq!(x.mask_spec, y.mask_spec);
            assert_eq!(x.output, y.output);
            if !x.augmented {
                assert_eq!(x.output.values, h.recombined());
            }
        }
        assert!(augment_dataset(&[], &policy).is_err());
    }

    proptest! {
        #[test]
        fn changes_stay_inside_the_bands(
            m in 20usize..60, n in 10usize..40, seed in any::<u64>(), d in 0usize..3,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = Array2::from_shape_fn((m, n), |_| rng.random::<f64>() * 3.0);
            let spec = Spectrogram::new(values, origin_zero(1, 1).calibration).unwrap();
            let hp = hpss_decompose(&spec, &HpssConfig::default()).unwrap();
            let policy = AugPolicy { domain: MaskDomain::ALL[d], placement: Placement::Random, ..AugPolicy::default() };
            let mk = build_mask(None, &spec, &policy, &mut rng).unwrap();
            let out = augment_spectrogram(&spec, &hp, &mk).unwrap();
            let mut inside = 0;
            for ((i, j), &v) in out.values.indexed_iter() {
                if mk.contains(i, j, (m, n)) {
                    inside += 1;
                    prop_assert_eq!(v, hp.percussive.values[[i, j]]);
                } else {
                    let y = spec.values[[i, j]];
                    prop_assert!((v - y).abs() <= 1e-9 * y.abs().max(1e-12));
                }
            }
            prop_assert_eq!(inside, mk.masked_cells((m, n)));
        }
    }
}

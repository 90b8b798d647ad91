//! Dynamic template matching: locate the AO/AC vibrations of one cardiac
//! cycle by fitting the two-vibration template to a segment.
//!
//! The fit minimises `‖y − d(θ)‖₂` over `θ = {T1, T2, f1, f2}` subject to
//! `0 < T2 − T1 < τ`, with amplitudes and widths frozen. The ordering
//! constraint is turned into box bounds by solving for `δ = T2 − T1`
//! instead of `T2`. Starts come from a phase-insensitive matched-filter
//! scan, and each start is polished with a projected BFGS descent.

mod bench;
mod optim;
mod seed;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::{CycleParams, Segment, DEFAULT_DURATION};

pub use bench::{dtm_benchmark, BenchConfig, BenchRow};
pub use optim::{minimize_box, BoxOptions, LocalResult};

/// Absolute timing tolerance for counting a vibration as identified, in s.
pub const IDENTIFICATION_TOLERANCE: f64 = 0.15;
/// Default AO to AC distance limit, in s.
pub const DEFAULT_TAU: f64 = 0.5;

/// Amplitudes and widths held fixed during the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedShape {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for FixedShape {
    fn default() -> Self {
        let c = CycleParams::reference();
        Self {
            a1: c.v1.amplitude,
            a2: c.v2.amplitude,
            b1: c.v1.width,
            b2: c.v2.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtmBounds {
    pub t1: Interval,
    /// Bounds on `T2 − T1`.
    pub delta: Interval,
    pub f1: Interval,
    pub f2: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtmConfig {
    pub tau: f64,
    pub shape: FixedShape,
    pub bounds: DtmBounds,
    /// Total number of local descents (T1 candidates times frequency variants).
    pub n_starts: usize,
    /// Frequency variants tried per T1 candidate.
    pub freq_variants: usize,
    pub max_iters: usize,
    /// Stop once the predicted decrease of `½‖r‖²` falls below `tol·(1 + ½‖r‖²)`.
    pub tol: f64,
}

/// Smallest allowed AO to AC distance, in s.
pub const MIN_DELTA: f64 = 0.1;

impl DtmConfig {
    /// Defaults for segments of `duration` seconds.
    pub fn for_duration(duration: f64) -> Self {
        Self::with_tau(duration, DEFAULT_TAU)
    }

    /// Defaults for segments of `duration` seconds with AO to AC limit `tau`.
    pub fn with_tau(duration: f64, tau: f64) -> Self {
        Self {
            tau,
            shape: FixedShape::default(),
            bounds: DtmBounds {
                t1: Interval::new(0.0, (duration - tau).max(0.0)),
                delta: Interval::new(MIN_DELTA, tau - 1e-3),
                f1: Interval::new(5.0, 18.0),
                f2: Interval::new(15.0, 30.0),
            },
            n_starts: 24,
            freq_variants: 3,
            max_iters: 200,
            tol: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, iv) in [("t1", b.t1), ("delta", b.delta), ("f1", b.f1), ("f2", b.f2)] {
            if !(iv.lo <= iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(Error::InvalidParameter(format!("empty {name} bounds {iv:?}")));
            }
        }
        if !(b.delta.lo > 0.0 && b.delta.hi < self.tau) {
            return Err(Error::InvalidParameter(format!(
                "delta bounds {:?} must lie inside (0, tau={})",
                b.delta, self.tau
            )));
        }
        if !(b.f1.lo > 0.0 && b.f2.lo > 0.0) {
            return Err(Error::InvalidParameter("frequency bounds must be positive".into()));
        }
        let s = &self.shape;
        if !(s.a1 >= 0.0 && s.a2 >= 0.0 && s.b1 > 0.0 && s.b2 > 0.0) || s.a1.max(s.a2) <= 0.0 {
            return Err(Error::InvalidParameter(format!("bad template shape {s:?}")));
        }
        if self.n_starts == 0 || self.freq_variants == 0 || self.max_iters == 0 {
            return Err(Error::InvalidParameter("n_starts, freq_variants and max_iters must be >= 1".into()));
        }
        Ok(())
    }

    fn lower(&self) -> [f64; 4] {
        let b = &self.bounds;
        [b.t1.lo, b.delta.lo, b.f1.lo, b.f2.lo]
    }

    fn upper(&self) -> [f64; 4] {
        let b = &self.bounds;
        [b.t1.hi, b.delta.hi, b.f1.hi, b.f2.hi]
    }
}

impl Default for DtmConfig {
    fn default() -> Self {
        Self::for_duration(DEFAULT_DURATION)
    }
}

/// Timing and carriers of the two vibrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub t1: f64,
    pub t2: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Theta {
    fn from_x(x: &[f64; 4]) -> Self {
        Self {
            t1: x[0],
            t2: x[0] + x[1],
            f1: x[2],
            f2: x[3],
        }
    }

    pub fn is_feasible(&self, cfg: &DtmConfig) -> bool {
        let b = &cfg.bounds;
        let d = self.t2 - self.t1;
        b.t1.contains(self.t1)
            && b.delta.contains(d)
            && b.f1.contains(self.f1)
            && b.f2.contains(self.f2)
            && d > 0.0
            && d < cfg.tau
    }

    /// Draw uniformly inside the configured bounds.
    pub fn sample<R: Rng + ?Sized>(cfg: &DtmConfig, rng: &mut R) -> Self {
        let b = &cfg.bounds;
        let mut draw = |iv: Interval| iv.lo + rng.random::<f64>() * iv.width();
        let t1 = draw(b.t1);
        let delta = draw(b.delta);
        let f1 = draw(b.f1);
        let f2 = draw(b.f2);
        Self {
            t1,
            t2: t1 + delta,
            f1,
            f2,
        }
    }

    /// Full cycle with the template's fixed amplitudes and widths.
    pub fn cycle(&self, shape: &FixedShape) -> CycleParams {
        let mut c = CycleParams::with_timing(self.t1, self.t2, self.f1, self.f2);
        c.v1.amplitude = shape.a1;
        c.v1.width = shape.b1;
        c.v2.amplitude = shape.a2;
        c.v2.width = shape.b2;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedTheta {
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    pub f1: f64,
    pub f2: f64,
    /// `‖y − d(θ*)‖₂` on the normalised segment.
    pub residual_norm: f64,
    pub converged: bool,
    pub n_evals: usize,
    /// `‖y‖₂` of the normalised segment.
    pub signal_norm: f64,
}

impl FittedTheta {
    pub fn theta(&self) -> Theta {
        Theta {
            t1: self.t1,
            t2: self.t2,
            f1: self.f1,
            f2: self.f2,
        }
    }

    /// True when the template explains almost none of the segment.
    pub fn is_degenerate(&self) -> bool {
        !self.converged || self.residual_norm >= 0.95 * self.signal_norm
    }
}

/// Residual norm and its gradient over `(T1, T2, f1, f2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualEval {
    pub norm: f64,
    pub grad: [f64; 4],
}

/// A segment prepared for fitting: rescaled so that its peak magnitude
/// equals the template's largest amplitude.
#[derive(Debug, Clone)]
pub struct DtmProblem {
    y: Vec<f64>,
    fs: f64,
    shape: FixedShape,
    /// Prefix sums of `y²`.
    prefix_sq: Vec<f64>,
}

// Envelopes are negligible (< e^-81) beyond this many widths.
const SUPPORT_WIDTHS: f64 = 9.0;

impl DtmProblem {
    pub fn new(segment: &Segment, shape: FixedShape) -> Result<Self> {
        let peak = segment.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::NoSignal);
        }
        let scale = shape.a1.max(shape.a2) / peak;
        let y: Vec<f64> = segment.samples.iter().map(|x| x * scale).collect();
        let mut prefix_sq = Vec::with_capacity(y.len() + 1);
        let mut acc = 0.0;
        prefix_sq.push(0.0);
        for v in &y {
            acc += v * v;
            prefix_sq.push(acc);
        }
        Ok(Self {
            y,
            fs: segment.sample_rate,
            shape,
            prefix_sq,
        })
    }

    pub fn normalized(&self) -> &[f64] {
        &self.y
    }

    pub fn sample_rate(&self) -> f64 {
        self.fs
    }

    pub fn signal_norm(&self) -> f64 {
        self.prefix_sq.last().copied().unwrap_or(0.0).sqrt()
    }

    fn index_span(&self, centre: f64, width: f64) -> (usize, usize) {
        let reach = SUPPORT_WIDTHS * width;
        let lo = ((centre - reach) * self.fs).floor().max(0.0) as usize;
        let hi = (((centre + reach) * self.fs).ceil() as usize + 1).min(self.y.len());
        (lo.min(hi), hi)
    }

    /// `½‖r‖²` and its gradient over `(T1, T2, f1, f2)`.
    fn half_sq(&self, th: &Theta) -> (f64, [f64; 4]) {
        let s = &self.shape;
        let (lo1, hi1) = self.index_span(th.t1, s.b1);
        let (lo2, hi2) = self.index_span(th.t2, s.b2);
        let lo = lo1.min(lo2);
        let hi = hi1.max(hi2).max(lo);
        let total = *self.prefix_sq.last().unwrap();
        let mut sq = self.prefix_sq[lo] + (total - self.prefix_sq[hi]);

        let inv_b1 = 1.0 / (s.b1 * s.b1);
        let inv_b2 = 1.0 / (s.b2 * s.b2);
        let w1 = 2.0 * PI * th.f1;
        let w2 = 2.0 * PI * th.f2;
        // Accumulate Σ r·∂d/∂p, then negate.
        let mut acc = [0.0f64; 4];
        for i in lo..hi {
            let t = i as f64 / self.fs;
            let d1 = t - th.t1;
            let d2 = t - th.t2;
            let e1 = (-d1 * d1 * inv_b1).exp();
            let e2 = (-d2 * d2 * inv_b2).exp();
            let (s1, c1) = (w1 * t).sin_cos();
            let (s2, c2) = (w2 * t).sin_cos();
            let v1 = s.a1 * c1 * e1;
            let v2 = s.a2 * c2 * e2;
            let r = self.y[i] - v1 - v2;
            sq += r * r;
            acc[0] += r * v1 * 2.0 * d1 * inv_b1;
            acc[1] += r * v2 * 2.0 * d2 * inv_b2;
            acc[2] += r * (-s.a1 * 2.0 * PI * t * s1 * e1);
            acc[3] += r * (-s.a2 * 2.0 * PI * t * s2 * e2);
        }
        (0.5 * sq.max(0.0), acc.map(|g| -g))
    }

    /// Objective in the box coordinates `(T1, δ, f1, f2)`.
    fn half_sq_x(&self, x: &[f64; 4]) -> (f64, [f64; 4]) {
        let (f, g) = self.half_sq(&Theta::from_x(x));
        (f, [g[0] + g[1], g[1], g[2], g[3]])
    }

    /// Diagonal of `JᵀJ` in box coordinates, the Gauss-Newton curvature.
    fn gauss_newton_diag_x(&self, x: &[f64; 4]) -> [f64; 4] {
        let th = Theta::from_x(x);
        let s = &self.shape;
        let (lo1, hi1) = self.index_span(th.t1, s.b1);
        let (lo2, hi2) = self.index_span(th.t2, s.b2);
        let inv_b1 = 1.0 / (s.b1 * s.b1);
        let inv_b2 = 1.0 / (s.b2 * s.b2);
        let mut d = [0.0f64; 4];
        let (mut t1_v1, mut t1_v2) = (0.0, 0.0);
        for i in lo1.min(lo2)..hi1.max(hi2) {
            let t = i as f64 / self.fs;
            let d1 = t - th.t1;
            let d2 = t - th.t2;
            let e1 = (-d1 * d1 * inv_b1).exp();
            let e2 = (-d2 * d2 * inv_b2).exp();
            let (s1, c1) = (2.0 * PI * th.f1 * t).sin_cos();
            let (s2, c2) = (2.0 * PI * th.f2 * t).sin_cos();
            let j_t1 = s.a1 * c1 * e1 * 2.0 * d1 * inv_b1;
            let j_t2 = s.a2 * c2 * e2 * 2.0 * d2 * inv_b2;
            t1_v1 += j_t1 * j_t1;
            t1_v2 += (j_t1 + j_t2) * (j_t1 + j_t2);
            d[1] += j_t2 * j_t2;
            d[2] += (s.a1 * 2.0 * PI * t * s1 * e1).powi(2);
            d[3] += (s.a2 * 2.0 * PI * t * s2 * e2).powi(2);
        }
        d[0] = t1_v1.max(t1_v2);
        d
    }

    /// `‖y − d(θ)‖₂` and its gradient over `(T1, T2, f1, f2)`.
    pub fn residual(&self, th: &Theta) -> ResidualEval {
        let (half, g) = self.half_sq(th);
        let norm = (2.0 * half).sqrt();
        let grad = if norm > 0.0 { g.map(|v| v / norm) } else { [0.0; 4] };
        ResidualEval { norm, grad }
    }

    /// Synthesised template for `θ` on the segment grid.
    pub fn template(&self, th: &Theta) -> Vec<f64> {
        let c = th.cycle(&self.shape);
        (0..self.y.len())
            .map(|i| {
                let t = i as f64 / self.fs;
                c.v1.value_at(t) + c.v2.value_at(t)
            })
            .collect()
    }
}

/// Residual norm and gradient of `θ` against the normalised segment.
pub fn dtm_residual(theta: &Theta, segment: &Segment, cfg: &DtmConfig) -> Result<ResidualEval> {
    cfg.validate()?;
    if !theta.is_feasible(cfg) {
        return Err(Error::InvalidParameter(format!("theta {theta:?} violates the bounds")));
    }
    Ok(DtmProblem::new(segment, cfg.shape)?.residual(theta))
}

/// Per-step move limits in box coordinates: seconds for T1 and δ, Hz for
/// the carriers. Smaller than a carrier-phase lobe so a start stays in its
/// basin.
const MAX_STEP: [f64; 4] = [0.02, 0.02, 0.2, 0.2];

/// Outcome of one local descent, kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartOutcome {
    pub start: Theta,
    pub start_residual: f64,
    pub end: Theta,
    pub end_residual: f64,
    pub converged: bool,
}

/// Fit the template and return every start's outcome alongside the best.
pub fn dtm_fit_detailed(segment: &Segment, cfg: &DtmConfig, seed: u64) -> Result<(FittedTheta, Vec<StartOutcome>)> {
    cfg.validate()?;
    if segment.duration() < cfg.tau {
        return Err(Error::InsufficientData {
            needed: (cfg.tau * segment.sample_rate).ceil() as usize,
            got: segment.len(),
        });
    }
    let problem = DtmProblem::new(segment, cfg.shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = seed::initial_points(&problem, cfg, &mut rng);

    let lo = cfg.lower();
    let hi = cfg.upper();
    let mut outcomes = Vec::with_capacity(starts.len());
    let mut n_evals = 0;
    for x0 in starts {
        // Variants can coincide after clamping; the descent is deterministic.
        if let Some(prev) = outcomes.iter().find(|o: &&StartOutcome| o.start == Theta::from_x(&x0)) {
            outcomes.push(*prev);
            continue;
        }
        let curvature = problem.gauss_newton_diag_x(&x0);
        let opts = BoxOptions {
            h0_diag: curvature.map(|c| 1.0 / c.max(1e-9)),
            max_step: MAX_STEP,
            max_iters: cfg.max_iters,
            tol: cfg.tol,
        };
        let res = minimize_box(|x| problem.half_sq_x(x), x0, lo, hi, &opts);
        n_evals += res.n_evals;
        outcomes.push(StartOutcome {
            start: Theta::from_x(&x0),
            start_residual: (2.0 * res.f_start).sqrt(),
            end: Theta::from_x(&res.x),
            end_residual: (2.0 * res.f).sqrt(),
            converged: res.converged,
        });
    }

    let best = outcomes
        .iter()
        .min_by(|a, b| a.end_residual.total_cmp(&b.end_residual))
        .expect("at least one start");
    let fitted = FittedTheta {
        t1: best.end.t1,
        t2: best.end.t2,
        f1: best.end.f1,
        f2: best.end.f2,
        residual_norm: best.end_residual,
        converged: best.converged,
        n_evals,
        signal_norm: problem.signal_norm(),
    };
    Ok((fitted, outcomes))
}

/// Fit the template to one segment. Deterministic for a given `seed`.
pub fn dtm_fit(segment: &Segment, cfg: &DtmConfig, seed: u64) -> Result<FittedTheta> {
    dtm_fit_detailed(segment, cfg, seed).map(|(f, _)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{add_noise, synthesize_segment};

    fn reference_segment() -> Segment {
        synthesize_segment(&[CycleParams::reference()], 200.0, 4.0).unwrap()
    }

    fn reference_theta() -> Theta {
        Theta {
            t1: 0.4,
            t2: 0.85,
            f1: 10.0,
            f2: 23.0,
        }
    }

    #[test]
    fn residual_vanishes_at_truth() {
        let r = dtm_residual(&reference_theta(), &reference_segment(), &DtmConfig::default()).unwrap();
        assert!(r.norm <= 1e-9, "{}", r.norm);
    }

    #[test]
    fn residual_far_from_truth_is_nearly_the_signal() {
        let seg = reference_segment();
        let cfg = DtmConfig::default();
        let p = DtmProblem::new(&seg, cfg.shape).unwrap();
        let far = Theta {
            t1: 1.4,
            t2: 1.85,
            ..reference_theta()
        };
        let r = dtm_residual(&far, &seg, &cfg).unwrap();
        assert!(r.norm >= 0.9 * p.signal_norm());
    }

    #[test]
    fn infeasible_theta_rejected() {
        let th = Theta {
            t2: 0.3,
            ..reference_theta()
        };
        assert!(dtm_residual(&th, &reference_segment(), &DtmConfig::default()).is_err());
    }

    #[test]
    fn template_matches_synthesis() {
        let seg = reference_segment();
        let p = DtmProblem::new(&seg, FixedShape::default()).unwrap();
        let tpl = p.template(&reference_theta());
        for (a, b) in tpl.iter().zip(&seg.samples) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn recovers_reference_cycle() {
        let fit = dtm_fit(&reference_segment(), &DtmConfig::default(), 0).unwrap();
        assert!((fit.t1 - 0.4).abs() <= 0.15, "{fit:?}");
        assert!((fit.t2 - 0.85).abs() <= 0.15, "{fit:?}");
        let gap = fit.t2 - fit.t1;
        assert!(gap > 0.0 && gap < 0.5);
        assert!(fit.converged);
    }

    #[test]
    fn fit_is_deterministic() {
        let seg = add_noise(&reference_segment(), 5.0, 11, None).unwrap();
        let cfg = DtmConfig::default();
        assert_eq!(dtm_fit(&seg, &cfg, 4).unwrap(), dtm_fit(&seg, &cfg, 4).unwrap());
    }

    #[test]
    fn best_is_no_worse_than_any_start() {
        let seg = add_noise(&reference_segment(), 0.0, 2, None).unwrap();
        let (fit, outcomes) = dtm_fit_detailed(&seg, &DtmConfig::default(), 9).unwrap();
        assert_eq!(outcomes.len(), 24);
        for o in &outcomes {
            assert!(fit.residual_norm <= o.start_residual + 1e-12);
            assert!(o.end_residual <= o.start_residual + 1e-12);
        }
        assert!(fit.theta().is_feasible(&DtmConfig::default()));
    }

    #[test]
    fn silent_segment_has_no_signal() {
        let seg = synthesize_segment(&[], 200.0, 4.0).unwrap();
        assert!(matches!(dtm_fit(&seg, &DtmConfig::default(), 0), Err(Error::NoSignal)));
    }

    #[test]
    fn translation_moves_the_fit() {
        let cfg = DtmConfig::default();
        for (t1, t2) in [(0.4, 0.85), (1.3, 1.55), (2.2, 2.6)] {
            let base = synthesize_segment(&[CycleParams::with_timing(t1, t2, 12.0, 21.0)], 200.0, 4.0).unwrap();
            let moved =
                synthesize_segment(&[CycleParams::with_timing(t1 + 0.3, t2 + 0.3, 12.0, 21.0)], 200.0, 4.0).unwrap();
            let a = dtm_fit(&base, &cfg, 1).unwrap();
            let b = dtm_fit(&moved, &cfg, 1).unwrap();
            assert!(((b.t1 - a.t1) - 0.3).abs() <= 0.15);
            assert!(((b.t2 - a.t2) - 0.3).abs() <= 0.15);
        }
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = DtmConfig::default();
        cfg.bounds.delta = Interval::new(0.1, 0.6);
        assert!(matches!(cfg.validate(), Err(Error::InvalidParameter(_))));
        let mut cfg = DtmConfig::default();
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
    }
}

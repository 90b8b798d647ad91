//! Start points for the local descents.
//!
//! The carrier phase of the template is absolute in time, so the objective
//! oscillates along both T and f and a purely local search needs to start
//! close to the true burst. Starts come from a matched-filter scan against
//! complex Gaussian-windowed exponentials, whose magnitude ignores carrier
//! phase. The strongest AO candidates are picked first; for each one the
//! AO burst is subtracted with its fitted complex amplitude and the AC burst
//! is searched within `[T1 + δmin, T1 + δmax]` on the remainder.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex;

use super::{DtmConfig, DtmProblem, Interval};

/// Scan grid: time step for AO (s), time step for AC (s), frequency step (Hz).
const T1_STEP: f64 = 0.01;
const T2_STEP: f64 = 0.005;
const F_STEP: f64 = 0.25;
/// Matched-filter support, in envelope widths.
const SCAN_WIDTHS: f64 = 4.0;
/// Frequency step of the objective line search: several points per carrier
/// alias (spaced `1/T ≥ 0.25` Hz for T ≤ 4 s), so each basin is sampled.
const F_FINE: f64 = 0.04;

#[derive(Debug, Clone, Copy)]
struct Atom {
    t: f64,
    f: f64,
    /// Least-squares complex amplitude of `e(t−T)·exp(i2πft)`.
    amp: Complex<f64>,
    score: f64,
}

struct Scanner<'a> {
    y: &'a [f64],
    fs: f64,
}

impl Scanner<'_> {
    fn span(&self, t: f64, width: f64) -> (usize, usize) {
        let reach = SCAN_WIDTHS * width;
        let lo = ((t - reach) * self.fs).ceil().max(0.0) as usize;
        let hi = (((t + reach) * self.fs).floor() + 1.0).max(0.0) as usize;
        (lo.min(self.y.len()), hi.min(self.y.len()))
    }

    /// Best atom at each time on the grid, maximising over frequency.
    ///
    /// The score is the decrease of `‖y − a·Re(...)‖²` for a fixed
    /// amplitude `a` with the carrier phase left free.
    fn profile(&self, y: &[f64], times: &[f64], freqs: &[f64], width: f64, a: f64) -> Vec<Atom> {
        let inv_b2 = 1.0 / (width * width);
        let mut out = Vec::with_capacity(times.len());
        let mut env = Vec::new();
        for &t in times {
            let (lo, hi) = self.span(t, width);
            env.clear();
            env.extend((lo..hi).map(|i| {
                let d = i as f64 / self.fs - t;
                (-d * d * inv_b2).exp()
            }));
            let energy: f64 = env.iter().map(|e| e * e).sum();
            let mut best = Atom {
                t,
                f: freqs[0],
                amp: Complex::new(0.0, 0.0),
                score: f64::NEG_INFINITY,
            };
            if energy > 0.0 {
                for &f in freqs {
                    let w = 2.0 * PI * f;
                    let c: Complex<f64> = (lo..hi)
                        .zip(&env)
                        .map(|(i, &e)| {
                            let (s, co) = (w * i as f64 / self.fs).sin_cos();
                            Complex::new(co, -s) * (y[i] * e)
                        })
                        .sum();
                    let score = 2.0 * a * c.norm() - 0.5 * a * a * energy;
                    if score > best.score {
                        best = Atom {
                            t,
                            f,
                            amp: c * (2.0 / energy),
                            score,
                        };
                    }
                }
            }
            out.push(best);
        }
        out
    }

    fn subtract(&self, y: &mut [f64], atom: &Atom, width: f64) {
        let inv_b2 = 1.0 / (width * width);
        let w = 2.0 * PI * atom.f;
        let (lo, hi) = self.span(atom.t, width);
        for (i, v) in y.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / self.fs;
            let d = t - atom.t;
            let e = (-d * d * inv_b2).exp();
            let (s, c) = (w * t).sin_cos();
            *v -= e * (atom.amp.re * c - atom.amp.im * s);
        }
    }
}

fn grid(iv: Interval, step: f64) -> Vec<f64> {
    let n = (iv.width() / step).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|k| iv.lo + k as f64 * step).collect();
    if g.last().is_some_and(|&x| iv.hi - x > 1e-9) {
        g.push(iv.hi);
    }
    g
}

/// Strict local maxima of the score profile, strongest first, at least
/// `min_sep` apart.
fn peaks(profile: &[Atom], min_sep: f64, limit: usize) -> Vec<Atom> {
    let n = profile.len();
    let mut cand: Vec<Atom> = (0..n)
        .filter(|&i| {
            let s = profile[i].score;
            s.is_finite()
                && (i == 0 || s > profile[i - 1].score)
                && (i + 1 == n || s >= profile[i + 1].score)
        })
        .map(|i| profile[i])
        .collect();
    cand.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.t.total_cmp(&b.t)));
    let mut picked: Vec<Atom> = Vec::with_capacity(limit);
    for c in cand {
        if picked.len() == limit {
            break;
        }
        if picked.iter().all(|p| (p.t - c.t).abs() >= min_sep) {
            picked.push(c);
        }
    }
    picked
}

/// Carrier frequency whose absolute phase best matches `atom` at its
/// envelope centre, taking the alignment closest to the scanned frequency.
fn phase_aligned(atom: &Atom) -> f64 {
    if atom.t < 0.2 || atom.amp.norm() == 0.0 {
        return atom.f;
    }
    // cos(2πf't) ≈ Re(A·exp(i2πft)) near t = T needs 2π(f'−f)T ≡ arg A.
    let spacing = 1.0 / atom.t;
    let shift = atom.amp.arg() / (2.0 * PI * atom.t);
    let k = (-shift / spacing).round();
    atom.f + shift + k * spacing
}

/// One Gaussian-enveloped cosine of the template.
#[derive(Debug, Clone, Copy)]
struct Burst {
    t: f64,
    f: f64,
    width: f64,
    amp: f64,
}

impl Scanner<'_> {
    /// Carrier frequency in `iv` minimising `½‖y − other − burst(f)‖²`,
    /// searched on a fine grid with the burst's timing held fixed.
    ///
    /// The carrier phase is absolute in time, so along `f` the objective has
    /// aliases every `1/T` Hz whose depths differ too little for the
    /// matched-filter scan to rank them. Only the burst's own support is
    /// evaluated: the objective changes nowhere else.
    fn best_carrier(&self, burst: Burst, other: Burst, iv: Interval) -> f64 {
        let (lo, hi) = self.span(burst.t, burst.width);
        let cos_at = |b: &Burst, t: f64| {
            let d = (t - b.t) / b.width;
            b.amp * (-d * d).exp() * (2.0 * PI * b.f * t).cos()
        };
        let env: Vec<f64> = (lo..hi)
            .map(|i| {
                let d = (i as f64 / self.fs - burst.t) / burst.width;
                burst.amp * (-d * d).exp()
            })
            .collect();
        let r: Vec<f64> = (lo..hi)
            .map(|i| self.y[i] - cos_at(&other, i as f64 / self.fs))
            .collect();
        let mut best = (f64::NEG_INFINITY, burst.f);
        for f in grid(iv, F_FINE) {
            // Σ d(2r − d) is the decrease of ‖r − d‖² relative to ‖r‖².
            let w = 2.0 * PI * f / self.fs;
            let step = Complex::from_polar(1.0, w);
            let mut z = Complex::from_polar(1.0, w * lo as f64);
            let mut gain = 0.0;
            for (&e, &ri) in env.iter().zip(&r) {
                let d = e * z.re;
                gain += d * (2.0 * ri - d);
                z *= step;
            }
            if gain > best.0 {
                best = (gain, f);
            }
        }
        best.1
    }
}

pub(super) fn initial_points<R: Rng + ?Sized>(problem: &DtmProblem, cfg: &DtmConfig, rng: &mut R) -> Vec<[f64; 4]> {
    let y = problem.normalized();
    let fs = problem.sample_rate();
    let b = &cfg.bounds;
    let s = &cfg.shape;
    let scanner = Scanner { y, fs };
    let end = (y.len().saturating_sub(1)) as f64 / fs;

    let n_t1 = cfg.n_starts.div_ceil(cfg.freq_variants);
    let f1_grid = grid(b.f1, F_STEP);
    let f2_grid = grid(b.f2, F_STEP);
    let t1_grid = grid(b.t1, T1_STEP);

    let profile = scanner.profile(y, &t1_grid, &f1_grid, s.b1, s.a1);
    let mut ao = peaks(&profile, 2.0 * s.b1, n_t1);
    // Pad with evenly spaced grid atoms when the profile has few peaks.
    let mut k = 0;
    while ao.len() < n_t1 && k < n_t1 {
        let t = b.t1.lo + b.t1.width() * (k as f64 + 0.5) / n_t1 as f64;
        let idx = ((t - b.t1.lo) / T1_STEP).round() as usize;
        let atom = profile[idx.min(profile.len() - 1)];
        if ao.iter().all(|p| (p.t - atom.t).abs() >= 2.0 * s.b1) {
            ao.push(atom);
        }
        k += 1;
    }

    let mut starts = Vec::with_capacity(cfg.n_starts);
    let mut residual = y.to_vec();
    for v1 in &ao {
        residual.copy_from_slice(y);
        scanner.subtract(&mut residual, v1, s.b1);
        let window = Interval::new(v1.t + b.delta.lo, (v1.t + b.delta.hi).min(end.max(v1.t + b.delta.lo)));
        let t2_grid = grid(window, T2_STEP);
        let v2 = scanner
            .profile(&residual, &t2_grid, &f2_grid, s.b2, s.a2)
            .into_iter()
            .max_by(|a, b| a.score.total_cmp(&b.score).then(b.t.total_cmp(&a.t)))
            .expect("non-empty AC grid");

        let t1 = b.t1.clamp(v1.t);
        let delta = b.delta.clamp(v2.t - t1);
        let aligned = (b.f1.clamp(phase_aligned(v1)), b.f2.clamp(phase_aligned(&v2)));
        let mut b1 = Burst {
            t: t1,
            f: aligned.0,
            width: s.b1,
            amp: s.a1,
        };
        let mut b2 = Burst {
            t: t1 + delta,
            f: aligned.1,
            width: s.b2,
            amp: s.a2,
        };
        b1.f = scanner.best_carrier(b1, b2, b.f1);
        b2.f = scanner.best_carrier(b2, b1, b.f2);
        b1.f = scanner.best_carrier(b1, b2, b.f1);
        let searched = (b1.f, b2.f);
        for variant in 0..cfg.freq_variants {
            if starts.len() == cfg.n_starts {
                break;
            }
            let (f1, f2) = match variant {
                0 => searched,
                1 => aligned,
                _ => {
                    // Jitter by up to one carrier-phase lobe.
                    let j1 = rng.random_range(-1.0..1.0) / v1.t.max(0.25);
                    let j2 = rng.random_range(-1.0..1.0) / v2.t.max(0.25);
                    (b.f1.clamp(searched.0 + j1), b.f2.clamp(searched.1 + j2))
                }
            };
            starts.push([t1, delta, f1, f2]);
        }
    }
    starts
}

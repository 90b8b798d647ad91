//! Projected BFGS for small box-constrained problems.

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptions<const N: usize> {
    /// Diagonal of the initial inverse Hessian.
    pub h0_diag: [f64; N],
    /// Largest allowed move per coordinate in one step.
    pub max_step: [f64; N],
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalResult<const N: usize> {
    pub x: [f64; N],
    pub f: f64,
    pub f_start: f64,
    pub n_evals: usize,
    pub iters: usize,
    pub converged: bool,
}

fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diag<const N: usize>(d: &[f64; N]) -> [[f64; N]; N] {
    let mut h = [[0.0; N]; N];
    for i in 0..N {
        h[i][i] = d[i];
    }
    h
}

/// Minimise `f` over the box `[lo, hi]` starting from `x0`.
///
/// `f` returns the objective and its gradient. Coordinates sitting on a
/// bound with the gradient pointing outward are frozen for the step; the
/// remaining ones follow the quasi-Newton direction, and the trial point is
/// projected back into the box before the Armijo test. Every accepted step
/// strictly decreases the objective, so `f <= f_start` always holds.
pub fn minimize_box<F, const N: usize>(
    mut f: F,
    x0: [f64; N],
    lo: [f64; N],
    hi: [f64; N],
    opts: &BoxOptions<N>,
) -> LocalResult<N>
where
    F: FnMut(&[f64; N]) -> (f64, [f64; N]),
{
    let project = |x: [f64; N]| -> [f64; N] {
        let mut p = x;
        for i in 0..N {
            p[i] = p[i].clamp(lo[i], hi[i]);
        }
        p
    };

    let mut x = project(x0);
    let (mut fx, mut g) = f(&x);
    let f_start = fx;
    let mut n_evals = 1;
    let mut h = diag(&opts.h0_diag);
    let mut fresh = true;
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_iters {
        iters += 1;
        let free: [bool; N] =
            std::array::from_fn(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)));

        let direction = |h: &[[f64; N]; N]| -> [f64; N] {
            std::array::from_fn(|i| {
                if !free[i] {
                    return 0.0;
                }
                -(0..N).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>()
            })
        };

        let mut d = direction(&h);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) && !fresh {
            h = diag(&opts.h0_diag);
            fresh = true;
            d = direction(&h);
            gd = dot(&g, &d);
        }
        if !(gd < 0.0) || -0.5 * gd <= opts.tol * (1.0 + fx) {
            converged = true;
            break;
        }

        let ratio = (0..N)
            .map(|i| d[i].abs() / opts.max_step[i])
            .fold(0.0f64, f64::max);
        if ratio > 1.0 {
            d = d.map(|v| v / ratio);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn = project(std::array::from_fn(|i| x[i] + alpha * d[i]));
            let s: [f64; N] = std::array::from_fn(|i| xn[i] - x[i]);
            if s.iter().all(|&v| v == 0.0) {
                break;
            }
            let (fnew, gnew) = f(&xn);
            n_evals += 1;
            if fnew <= fx + ARMIJO * dot(&g, &s) && fnew < fx {
                accepted = Some((xn, s, fnew, gnew));
                break;
            }
            alpha *= 0.5;
        }

        let Some((xn, s, fnew, gnew)) = accepted else {
            if fresh {
                // No descent even along the scaled gradient: stationary to
                // working precision.
                converged = true;
                break;
            }
            h = diag(&opts.h0_diag);
            fresh = true;
            continue;
        };

        let yv: [f64; N] = std::array::from_fn(|i| gnew[i] - g[i]);
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            bfgs_update(&mut h, &s, &yv, sy);
            fresh = false;
        }
        x = xn;
        fx = fnew;
        g = gnew;
    }

    LocalResult {
        x,
        f: fx,
        f_start,
        n_evals,
        iters,
        converged,
    }
}

/// Inverse-Hessian update `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn bfgs_update<const N: usize>(h: &mut [[f64; N]; N], s: &[f64; N], y: &[f64; N], sy: f64) {
    let rho = 1.0 / sy;
    let hy: [f64; N] = std::array::from_fn(|i| dot(&h[i], y));
    let yhy = dot(y, &hy);
    for i in 0..N {
        for j in 0..N {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts<const N: usize>() -> BoxOptions<N> {
        BoxOptions {
            h0_diag: [1.0; N],
            max_step: [10.0; N],
            max_iters: 500,
            tol: 1e-20,
        }
    }

    #[test]
    fn unconstrained_quadratic() {
        let f = |x: &[f64; 2]| {
            let a = x[0] - 1.0;
            let b = x[1] + 2.0;
            (a * a + 10.0 * b * b, [2.0 * a, 20.0 * b])
        };
        let r = minimize_box(f, [5.0, 5.0], [-10.0; 2], [10.0; 2], &opts());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] + 2.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn active_bound_is_respected() {
        let f = |x: &[f64; 2]| {
            let a = x[0] - 3.0;
            let b = x[1];
            (a * a + b * b, [2.0 * a, 2.0 * b])
        };
        let r = minimize_box(f, [0.0, 1.0], [-1.0, -1.0], [1.0, 1.0], &opts());
        assert!(r.converged);
        assert_eq!(r.x[0], 1.0);
        assert!(r.x[1].abs() < 1e-6);
    }

    #[test]
    fn rosenbrock_in_a_box() {
        let f = |x: &[f64; 2]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let ga = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            let gb = 200.0 * (b - a * a);
            (v, [ga, gb])
        };
        let mut o = opts();
        o.max_step = [0.5; 2];
        let r = minimize_box(f, [-1.2, 1.0], [-2.0; 2], [2.0; 2], &o);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{r:?}");
        assert!(r.f <= r.f_start);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let f = |x: &[f64; 2]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            (v, [-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)])
        };
        let mut o = opts();
        o.max_iters = 2;
        let r = minimize_box(f, [-1.2, 1.0], [-2.0; 2], [2.0; 2], &o);
        assert!(!r.converged);
        assert_eq!(r.iters, 2);
    }
}

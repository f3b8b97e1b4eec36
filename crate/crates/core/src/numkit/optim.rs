//! Nelder–Mead simplex minimization in three dimensions.

use crate::numkit::linalg::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    /// Iteration cap for each simplex run.
    pub max_iter: usize,
    /// Spread of function values across the simplex at termination.
    pub f_tol: f64,
    /// Largest vertex distance from the best vertex at termination.
    pub x_tol: f64,
    /// Number of times the simplex is rebuilt around the best point after convergence.
    pub restarts: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            f_tol: 1e-10,
            x_tol: 1e-8,
            restarts: 2,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: Vec3,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` from `x0`.
///
/// NaN values are treated as `+∞`, so an objective may signal an infeasible
/// point by returning either. The best point found is always returned; the
/// `converged` flag reports whether the final simplex met both tolerances.
pub fn minimize(f: impl Fn(&Vec3) -> f64, x0: Vec3, cfg: &OptimConfig) -> Minimum {
    let eval = |x: &Vec3| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best = Minimum {
        x: x0,
        value: eval(&x0),
        converged: false,
        iterations: 0,
    };
    for run in 0..=cfg.restarts {
        let (x, value, converged, iters) = simplex_run(&eval, best.x, best.value, cfg);
        best.iterations += iters;
        let improvement = best.value - value;
        if value < best.value || run == 0 {
            best.x = x;
            best.value = value;
        }
        best.converged = converged;
        // A restart that cannot improve means the point is a genuine minimum.
        if run > 0 && converged && !(improvement > cfg.f_tol) {
            break;
        }
    }
    best
}

fn simplex_run(f: &impl Fn(&Vec3) -> f64, x0: Vec3, f0: f64, cfg: &OptimConfig) -> (Vec3, f64, bool, usize) {
    let mut pts: [(Vec3, f64); 4] = [(x0, f0); 4];
    for i in 0..3 {
        let mut x = x0;
        x[i] += cfg.initial_step * x0[i].abs().max(1.0);
        pts[i + 1] = (x, f(&x));
    }

    for iter in 0..cfg.max_iter {
        // Stable sort keeps the incumbent first among ties.
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (pts[0].1, pts[3].1);
        let x_spread = pts[1..]
            .iter()
            .map(|(x, _)| (0..3).map(|i| (x[i] - pts[0].0[i]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let f_spread = if worst.is_finite() { worst - best } else { f64::INFINITY };
        if f_spread <= cfg.f_tol && x_spread <= cfg.x_tol {
            return (pts[0].0, pts[0].1, true, iter);
        }

        let mut centroid = [0.0; 3];
        for (x, _) in &pts[..3] {
            for i in 0..3 {
                centroid[i] += x[i] / 3.0;
            }
        }
        let along = |t: f64| -> Vec3 {
            let w = pts[3].0;
            [
                centroid[0] + t * (centroid[0] - w[0]),
                centroid[1] + t * (centroid[1] - w[1]),
                centroid[2] + t * (centroid[2] - w[2]),
            ]
        };

        let xr = along(REFLECT);
        let fr = f(&xr);
        if fr < pts[0].1 {
            let xe = along(EXPAND);
            let fe = f(&xe);
            pts[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < pts[2].1 {
            pts[3] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < pts[3].1 {
            let xc = along(CONTRACT * REFLECT);
            (xc, f(&xc))
        } else {
            let xc = along(-CONTRACT);
            (xc, f(&xc))
        };
        if fc < pts[3].1.min(fr) {
            pts[3] = (xc, fc);
            continue;
        }
        let x_best = pts[0].0;
        for p in pts.iter_mut().skip(1) {
            for i in 0..3 {
                p.0[i] = x_best[i] + SHRINK * (p.0[i] - x_best[i]);
            }
            p.1 = f(&p.0);
        }
    }
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    (pts[0].0, pts[0].1, false, cfg.max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &Vec3) -> f64 {
        (0..2)
            .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
            .sum()
    }

    #[test]
    fn quadratic_bowl() {
        let a = [1.5, -2.0, 0.25];
        let f = |x: &Vec3| (0..3).map(|i| (x[i] - a[i]).powi(2)).sum::<f64>();
        for x0 in [[0.0; 3], [10.0, -7.0, 3.0], [-100.0, 50.0, 0.1]] {
            let m = minimize(f, x0, &OptimConfig::default());
            assert!(m.converged);
            for i in 0..3 {
                assert!((m.x[i] - a[i]).abs() < 1e-6, "{:?}", m.x);
            }
        }
    }

    #[test]
    fn rosenbrock_valley() {
        let cfg = OptimConfig {
            max_iter: 10_000,
            ..Default::default()
        };
        let m = minimize(rosenbrock, [-1.2, 1.0, 1.0], &cfg);
        assert!(m.converged);
        for v in m.x {
            assert!((v - 1.0).abs() < 1e-4, "{:?}", m.x);
        }
    }

    #[test]
    fn constant_objective_returns_start() {
        let x0 = [0.3, -0.2, 7.0];
        let m = minimize(|_| 4.2, x0, &OptimConfig::default());
        assert!(m.converged);
        assert_eq!(m.x, x0);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let cfg = OptimConfig {
            max_iter: 5,
            restarts: 0,
            ..Default::default()
        };
        let m = minimize(rosenbrock, [-1.2, 1.0, 1.0], &cfg);
        assert!(!m.converged);
        assert!(m.value <= rosenbrock(&[-1.2, 1.0, 1.0]));
    }

    #[test]
    fn nan_regions_are_avoided() {
        let f = |x: &Vec3| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 1.0).powi(2) + x[1] * x[1] + x[2] * x[2]
            }
        };
        let m = minimize(f, [0.5, 1.0, 1.0], &OptimConfig::default());
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shift_invariance() {
        let f = |x: &Vec3| (x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2) + (x[2] - x[0]).powi(2);
        let cfg = OptimConfig::default();
        let a = minimize(f, [0.0; 3], &cfg);
        let b = minimize(|x| f(x) + 1234.5, [0.0; 3], &cfg);
        for i in 0..3 {
            assert!((a.x[i] - b.x[i]).abs() < 1e-6);
        }
    }
}

use crate::dist::{Params, Sample};
use crate::error::Result;
use crate::estimators::{check_fit_sample, params_from_log, EstimationResult, Method};
use crate::numkit::linalg::{invert3, Matrix3, Vec3};
use crate::numkit::optim::{minimize, OptimConfig};

/// Maximum likelihood from the default start `(1, 1, 1)`.
pub fn fit_ml(s: &Sample, cfg: &OptimConfig) -> Result<EstimationResult> {
    fit_ml_from(s, cfg, Params { alpha: 1.0, c: 1.0, k: 1.0 })
}

/// Maximum likelihood by simplex search on `(log α, log c, log k)`,
/// finished with a few safeguarded Newton steps on the score equations.
pub fn fit_ml_from(s: &Sample, cfg: &OptimConfig, init: Params) -> Result<EstimationResult> {
    check_fit_sample(s)?;
    // Sorted so the sums, and hence the estimate, ignore sample order.
    let logs: Vec<f64> = s.sorted().iter().map(|x| x.ln()).collect();
    let nll = |v: &Vec3| match params_from_log(v) {
        Some(p) => -logs.iter().map(|&lx| p.log_pdf_at_log(lx)).sum::<f64>(),
        None => f64::INFINITY,
    };

    let min = minimize(nll, init.to_log(), cfg);
    let (x, value, polished) = newton_polish(&logs, min.x, min.value, &nll);
    let params = Params::from_log(&x)?;
    let converged = min.converged || polished;
    Ok(EstimationResult {
        params,
        method: Method::Ml,
        converged,
        iterations: min.iterations,
        objective: -value,
    })
}

/// Log-space gradient of the log-likelihood: `θ ⊙ Σ s(θ, xᵢ)`.
fn log_gradient(logs: &[f64], v: &Vec3) -> Option<Vec3> {
    let p = params_from_log(v)?;
    let mut g = [0.0; 3];
    for &lx in logs {
        let sc = p.score_at_log(lx).to_array();
        for i in 0..3 {
            g[i] += sc[i];
        }
    }
    let th = p.to_array();
    Some([g[0] * th[0], g[1] * th[1], g[2] * th[2]])
}

/// Newton iterations on the score equations with a finite-difference
/// Hessian; a step is only kept if it does not worsen the likelihood.
/// Returns whether the score was driven below `1e-6 · n`.
fn newton_polish(logs: &[f64], mut x: Vec3, mut value: f64, nll: &impl Fn(&Vec3) -> f64) -> (Vec3, f64, bool) {
    let n = logs.len() as f64;
    for _ in 0..20 {
        let Some(g) = log_gradient(logs, &x) else { break };
        if g.iter().all(|gi| gi.abs() < 1e-6 * n) {
            return (x, value, true);
        }
        let mut hess = Matrix3::ZERO;
        for j in 0..3 {
            let h = 1e-5;
            let mut up = x;
            let mut dn = x;
            up[j] += h;
            dn[j] -= h;
            let (Some(gu), Some(gd)) = (log_gradient(logs, &up), log_gradient(logs, &dn)) else {
                return (x, value, false);
            };
            for i in 0..3 {
                hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        let hess = (hess + hess.transpose()).scale(0.5);
        let Ok(inv) = invert3(&hess) else { break };
        let step = inv.mul_vec(&g);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let cand = [x[0] - lambda * step[0], x[1] - lambda * step[1], x[2] - lambda * step[2]];
            let fv = nll(&cand);
            if fv <= value {
                x = cand;
                value = fv;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let ok = log_gradient(logs, &x).is_some_and(|g| g.iter().all(|gi| gi.abs() < 1e-6 * n));
    (x, value, ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn identical_values_are_degenerate() {
        let s = Sample::new(vec![2.0; 4]).unwrap();
        assert_eq!(fit_ml(&s, &OptimConfig::default()).unwrap_err(), Error::DegenerateSample);
    }

    #[test]
    fn score_vanishes_at_the_optimum() {
        let truth = Params::new(3.0, 2.0, 2.0).unwrap();
        let s = truth.sample(300, 5).unwrap();
        let r = fit_ml(&s, &OptimConfig::default()).unwrap();
        assert!(r.converged);
        let n = s.len() as f64;
        let mut g = [0.0; 3];
        for &x in s.values() {
            let sc = r.params.score(x).unwrap().to_array();
            for i in 0..3 {
                g[i] += sc[i];
            }
        }
        for gi in g {
            assert!(gi.abs() < 1e-4 * n, "{g:?}");
        }
        assert!(r.objective >= s.log_likelihood(&truth).unwrap());
    }
}

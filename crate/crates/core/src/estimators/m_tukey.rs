//! Tukey-biweight M-estimation on the log-survival transformation.
//!
//! Each sweep freezes the biweight weights ωᵢ of the current residuals and
//! then updates the parameters one at a time from the weighted estimating
//! equations `Σ ωᵢ rᵢ ∂uᵢ/∂θ = 0`: `k` in closed form, `c` by bracketed
//! bisection and `log α` as a weighted average.
//!
//! The weights `(1 - (r/b)²)²` are not the reweighting weights of the loss
//! `1 - (1 - (r/b)²)²`, so a sweep can stop lowering the loss short of its
//! minimum. Sweeps are only kept while the loss does not increase; once no
//! halving of a sweep helps, the loss is minimized directly from there.

use crate::dist::{Kernel, Params, Sample};
use crate::error::{Error, Result};
use crate::estimators::least_squares::{fit_ls_transformed, model_value, TransformedSample};
use crate::estimators::{check_fit_sample, params_from_log, EstimationResult, Method};
use crate::numkit::linalg::Vec3;
use crate::numkit::optim::{minimize, OptimConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MEstConfig {
    /// Biweight cutoff on the raw residual scale.
    pub b: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MEstConfig {
    fn default() -> Self {
        Self {
            b: 1.345,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

/// `1 - (1 - (r/b)²)²` inside the cutoff, `1` outside.
pub fn tukey_rho(r: f64, b: f64) -> f64 {
    if r.abs() <= b {
        let z = 1.0 - (r / b).powi(2);
        1.0 - z * z
    } else {
        1.0
    }
}

/// `(1 - (r/b)²)²` inside the cutoff, `0` outside.
pub fn tukey_weight(r: f64, b: f64) -> f64 {
    if r.abs() <= b {
        let z = 1.0 - (r / b).powi(2);
        z * z
    } else {
        0.0
    }
}

/// Tukey M-estimate; `init` defaults to the LS fit when `None`.
pub fn fit_m_tukey(s: &Sample, cfg: &MEstConfig, init: Option<Params>) -> Result<EstimationResult> {
    check_fit_sample(s)?;
    let ts = TransformedSample::from_sample(s);
    let init = match init {
        Some(p) => p,
        None => fit_ls_transformed(&ts, &OptimConfig::default())?.params,
    };
    fit_m_tukey_transformed(&ts, cfg, init)
}

fn total_loss(ts: &TransformedSample, p: &Params, b: f64) -> f64 {
    ts.residuals(p).iter().map(|&r| tukey_rho(r, b)).sum()
}

pub fn fit_m_tukey_transformed(ts: &TransformedSample, cfg: &MEstConfig, init: Params) -> Result<EstimationResult> {
    if !(cfg.b > 0.0) {
        return Err(Error::InvalidParams(format!("tuning constant b must be positive, got {}", cfg.b)));
    }
    let mut theta = init;
    let mut loss = total_loss(ts, &theta, cfg.b);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let weights: Vec<f64> = ts.residuals(&theta).iter().map(|&r| tukey_weight(r, cfg.b)).collect();
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::AllWeightsZero { b: cfg.b });
        }
        let proposal = sweep(ts, &weights, theta);

        // Accept the sweep, or the largest halving of it in log space that
        // does not raise the total loss.
        let from = theta.to_log();
        let to = proposal.to_log();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=10 {
            let cand: Vec<f64> = (0..3).map(|i| from[i] + lambda * (to[i] - from[i])).collect();
            if let Ok(p) = Params::from_log(&[cand[0], cand[1], cand[2]]) {
                let l = total_loss(ts, &p, cfg.b);
                if l <= loss {
                    accepted = Some((p, l));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            // The frozen-weight sweep no longer lowers Σρ; finish on Σρ itself.
            let polish = minimize(
                |v: &Vec3| params_from_log(v).map_or(f64::INFINITY, |p| total_loss(ts, &p, cfg.b)),
                theta.to_log(),
                &OptimConfig {
                    initial_step: 0.05,
                    ..OptimConfig::default()
                },
            );
            if polish.value <= loss {
                theta = Params::from_log(&polish.x)?;
                loss = polish.value;
            }
            iterations += polish.iterations;
            converged = polish.converged;
            break;
        };
        let change = next
            .to_log()
            .iter()
            .zip(from)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = next;
        loss = next_loss;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(EstimationResult {
        params: theta,
        method: Method::MTukey,
        converged,
        iterations,
        objective: loss,
    })
}

/// One pass of the k, c and α updates under fixed weights.
fn sweep(ts: &TransformedSample, w: &[f64], theta: Params) -> Params {
    let mut p = theta;
    let logs = ts.log_x();
    let y = ts.y();

    // k: Σ ω (y + log α - log h) L/h / Σ ω L²/h
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..logs.len() {
        let kt = Kernel::new(&p, logs[i]);
        num += w[i] * (y[i] + p.alpha.ln() - kt.h.ln()) * kt.lp / kt.h;
        den += w[i] * kt.lp * kt.lp / kt.h;
    }
    let k_new = num / den;
    if k_new.is_finite() && k_new > 0.0 {
        p.k = k_new;
    }

    // c: root of Σ ω r ∂u/∂c, ∂u/∂c = k q log x / h
    let c_eq = |log_c: f64| -> f64 {
        let q = Params { c: log_c.exp(), ..p };
        (0..logs.len())
            .map(|i| {
                if w[i] == 0.0 {
                    return 0.0;
                }
                let kt = Kernel::new(&q, logs[i]);
                let r = y[i] - model_value(&q, logs[i]);
                w[i] * r * q.k * kt.q * logs[i] / kt.h
            })
            .sum()
    };
    if let Some(lc) = bracketed_root(c_eq, p.c.ln(), 2.0, 3) {
        p.c = lc.exp();
    }

    // log α: Σ ω g (k L + log h - y) / Σ ω g, g = (1 - t)/(α h)
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..logs.len() {
        let kt = Kernel::new(&p, logs[i]);
        let g = kt.one_minus_t / (p.alpha * kt.h);
        num += w[i] * g * (p.k * kt.lp + kt.h.ln() - y[i]);
        den += w[i] * g;
    }
    let log_alpha = num / den;
    if log_alpha.is_finite() && log_alpha.abs() < 700.0 {
        p.alpha = log_alpha.exp();
    }
    p
}

/// Bisection on `[x0 - half, x0 + half]`, widening the half-width by
/// `half` up to `widen` times until the ends differ in sign.
fn bracketed_root(f: impl Fn(f64) -> f64, x0: f64, half: f64, widen: usize) -> Option<f64> {
    let mut width = half;
    for _ in 0..=widen {
        let (mut lo, mut hi) = (x0 - width, x0 + width);
        let (mut flo, fhi) = (f(lo), f(hi));
        if flo.is_finite() && fhi.is_finite() && flo * fhi <= 0.0 {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if !fm.is_finite() {
                    return None;
                }
                if (fm <= 0.0) == (flo <= 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-14 {
                    break;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        width += half;
    }
    None
}

//! Least squares on the log-survival scale.
//!
//! With plotting positions `F̂ᵢ = (i - 0.5) / n` the targets are
//! `yᵢ = -log(1 - F̂ᵢ)` and the model values are
//! `uᵢ = -log S(x₍ᵢ₎) = k log(1 + x^c) - log α + log hᵢ`,
//! `hᵢ = 1 - (1 - α)(1 + x^c)^(-k)`.

use crate::dist::{Kernel, Params, Sample};
use crate::error::{Error, Result};
use crate::estimators::{check_fit_sample, params_from_log, EstimationResult, Method};
use crate::numkit::linalg::Vec3;
use crate::numkit::optim::{minimize, OptimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSample {
    x_sorted: Vec<f64>,
    log_x: Vec<f64>,
    y: Vec<f64>,
}

impl TransformedSample {
    pub fn from_sample(s: &Sample) -> Self {
        let x_sorted = s.sorted();
        let n = x_sorted.len() as f64;
        let y = (1..=x_sorted.len())
            .map(|i| -(-(i as f64 - 0.5) / n).ln_1p())
            .collect();
        Self::with_targets(x_sorted, y).expect("plotting positions match the sample length")
    }

    /// Custom targets, e.g. exact model values for a noiseless fixed point.
    pub fn with_targets(x_sorted: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x_sorted.len() != y.len() {
            return Err(Error::InvalidParams(format!(
                "{} observations but {} targets",
                x_sorted.len(),
                y.len()
            )));
        }
        if x_sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParams("observations must be sorted ascending".into()));
        }
        let log_x = x_sorted.iter().map(|x| x.ln()).collect();
        Ok(Self { x_sorted, log_x, y })
    }

    pub fn x_sorted(&self) -> &[f64] {
        &self.x_sorted
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub(crate) fn log_x(&self) -> &[f64] {
        &self.log_x
    }

    /// Model values `uᵢ(θ)`.
    pub fn model(&self, p: &Params) -> Vec<f64> {
        self.log_x.iter().map(|&lx| model_value(p, lx)).collect()
    }

    pub fn residuals(&self, p: &Params) -> Vec<f64> {
        self.y
            .iter()
            .zip(&self.log_x)
            .map(|(y, &lx)| y - model_value(p, lx))
            .collect()
    }
}

pub(crate) fn model_value(p: &Params, lx: f64) -> f64 {
    let kt = Kernel::new(p, lx);
    p.k * kt.lp - p.alpha.ln() + kt.h.ln()
}

/// `S(θ) = Σ (yᵢ - uᵢ)²`
pub fn ls_objective(ts: &TransformedSample, p: &Params) -> f64 {
    ts.residuals(p).iter().map(|r| r * r).sum()
}

/// `∂S/∂θ = -2 Σ rᵢ ∂uᵢ/∂θ` with
/// `∂u/∂α = -(1 - t)/(α h)`, `∂u/∂c = k q log x / h`, `∂u/∂k = log(1 + x^c)/h`.
pub fn ls_gradient(ts: &TransformedSample, p: &Params) -> Vec3 {
    let mut g = [0.0; 3];
    for (&y, &lx) in ts.y.iter().zip(&ts.log_x) {
        let kt = Kernel::new(p, lx);
        let r = y - (p.k * kt.lp - p.alpha.ln() + kt.h.ln());
        let du = [
            -kt.one_minus_t / (p.alpha * kt.h),
            p.k * kt.q * lx / kt.h,
            kt.lp / kt.h,
        ];
        for i in 0..3 {
            g[i] -= 2.0 * r * du[i];
        }
    }
    g
}

pub fn fit_ls(s: &Sample, cfg: &OptimConfig) -> Result<EstimationResult> {
    check_fit_sample(s)?;
    fit_ls_transformed(&TransformedSample::from_sample(s), cfg)
}

/// Direct simplex minimization of `S` in log-parameter space from `(1, 1, 1)`.
pub fn fit_ls_transformed(ts: &TransformedSample, cfg: &OptimConfig) -> Result<EstimationResult> {
    let obj = |v: &Vec3| match params_from_log(v) {
        Some(p) => ls_objective(ts, &p),
        None => f64::INFINITY,
    };
    let min = minimize(obj, [0.0; 3], cfg);
    Ok(EstimationResult {
        params: Params::from_log(&min.x)?,
        method: Method::Ls,
        converged: min.converged,
        iterations: min.iterations,
        objective: min.value,
    })
}

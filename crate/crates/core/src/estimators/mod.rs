//! Parameter estimators for the MOEBXII family.
//!
//! - [`fit_ml`]: maximum likelihood.
//! - [`fit_ls`]: least squares on the log-survival transformation.
//! - [`fit_m_tukey`]: Tukey-biweight M-estimation on the same transformation.
//! - [`fit_obre`]: standardized optimal B-robust estimation.
//!
//! None of them return an error on non-convergence; the result carries a
//! `converged` flag instead so callers can count failures.

use serde::{Deserialize, Serialize};

use crate::dist::{Params, Sample};
use crate::error::{Error, Result};

mod least_squares;
mod m_tukey;
mod ml;
pub mod obre;

pub use least_squares::{fit_ls, fit_ls_transformed, ls_gradient, ls_objective, TransformedSample};
pub use m_tukey::{fit_m_tukey, fit_m_tukey_transformed, tukey_rho, tukey_weight, MEstConfig};
pub use ml::{fit_ml, fit_ml_from};
pub use obre::{fit_obre, obre_solve_aa, obre_weights, ObreConfig, ObreState};

/// Minimum sample size: three parameters plus one residual degree of freedom.
pub const MIN_SAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "M_TUKEY")]
    MTukey,
    #[serde(rename = "OBRE")]
    Obre,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ml, Method::Ls, Method::MTukey, Method::Obre];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ml => "ML",
            Method::Ls => "LS",
            Method::MTukey => "M_TUKEY",
            Method::Obre => "OBRE",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" | "mle" => Ok(Method::Ml),
            "ls" => Ok(Method::Ls),
            "m" | "m_tukey" | "tukey" => Ok(Method::MTukey),
            "obre" | "obr" => Ok(Method::Obre),
            other => Err(Error::InvalidParams(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationResult {
    pub params: Params,
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood for ML, the sum of squares for LS, the Tukey loss for
    /// M and the standardized estimating-equation norm `‖A ψ̄‖` for OBRE.
    pub objective: f64,
}

/// Checks the preconditions shared by every estimator.
pub(crate) fn check_fit_sample(s: &Sample) -> Result<()> {
    if s.len() < MIN_SAMPLE {
        return Err(Error::SampleTooSmall {
            needed: MIN_SAMPLE,
            got: s.len(),
        });
    }
    if let Some(bad) = s.values().iter().find(|x| !(**x > 0.0)) {
        return Err(Error::Domain(format!("observations must be > 0 for fitting, got {bad}")));
    }
    let first = s.values()[0];
    if s.values().iter().all(|&x| x == first) {
        return Err(Error::DegenerateSample);
    }
    Ok(())
}

/// Turns log-space iterates into `Params`, mapping overflow to `None`.
pub(crate) fn params_from_log(v: &[f64; 3]) -> Option<Params> {
    Params::from_log(v).ok()
}

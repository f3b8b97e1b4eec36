//! Marshall–Olkin extended Burr XII (MOEBXII) distribution and four
//! estimators of its parameters: maximum likelihood, transformed least
//! squares, Tukey-weighted M-estimation and the standardized optimal
//! B-robust estimator (OBRE). The [`sim`] module runs Monte Carlo
//! contamination studies comparing them.

pub mod dist;
pub mod error;
pub mod numkit;

pub use dist::{Params, Sample, ScoreVec};
pub use error::{Error, Result};
pub mod estimators;
pub mod sim;

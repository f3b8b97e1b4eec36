//! Monte Carlo contamination studies.
//!
//! Each replication draws a clean sample, overwrites its last `m` values with
//! five times the sample maximum and runs every requested estimator on the
//! same contaminated sample. Bias and RMSE are taken over the converged fits
//! only; the rest are counted as failures.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{Params, Sample};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_ls, fit_m_tukey, fit_ml, fit_obre, EstimationResult, MEstConfig, Method, ObreConfig,
};
use crate::numkit::optim::OptimConfig;

/// Multiplier applied to the clean sample maximum to build an outlier.
pub const OUTLIER_FACTOR: f64 = 5.0;

/// Parameter triples of the standard study grid.
pub const STUDY_TRIPLES: [(f64, f64, f64); 9] = [
    (3.0, 1.0, 1.0),
    (3.0, 1.0, 2.0),
    (3.0, 2.0, 1.0),
    (3.0, 2.0, 2.0),
    (3.0, 3.0, 3.0),
    (5.0, 1.0, 1.0),
    (5.0, 1.0, 2.0),
    (5.0, 2.0, 1.0),
    (5.0, 2.0, 2.0),
];

/// Sample sizes of the standard grid with their outlier counts.
pub const STUDY_SIZES: [(usize, usize); 3] = [(25, 1), (50, 2), (100, 4)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub truth: Params,
    pub n: usize,
    pub n_outliers: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
}

impl Scenario {
    pub fn new(truth: Params, n: usize, n_outliers: usize, replications: usize, seed: u64) -> Result<Self> {
        let sc = Self {
            truth,
            n,
            n_outliers,
            replications,
            seed,
            estimators: Method::ALL.to_vec(),
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        Params::new(self.truth.alpha, self.truth.c, self.truth.k)?;
        if self.n_outliers >= self.n {
            return Err(Error::InvalidScenario(format!(
                "{} outliers in a sample of {}",
                self.n_outliers, self.n
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidScenario("at least one replication is required".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidScenario("no estimators requested".into()));
        }
        Ok(())
    }

    /// Stable identifier, e.g. `a3_c1_k1_n25_o1`.
    pub fn id(&self) -> String {
        format!(
            "a{}_c{}_k{}_n{}_o{}",
            self.truth.alpha, self.truth.c, self.truth.k, self.n, self.n_outliers
        )
    }

    /// Seed of replication `r`.
    pub fn replication_seed(&self, r: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(r as u64))
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The 27 scenarios of the standard grid: every triple at every sample size.
pub fn study_grid(replications: usize, seed: u64) -> Vec<Scenario> {
    let mut out = Vec::with_capacity(27);
    for (n, m) in STUDY_SIZES {
        for (a, c, k) in STUDY_TRIPLES {
            out.push(Scenario {
                truth: Params { alpha: a, c, k },
                n,
                n_outliers: m,
                replications,
                seed,
                estimators: Method::ALL.to_vec(),
            });
        }
    }
    out
}

/// Heavy contamination: every triple at `n = 50` with four outliers.
pub fn heavy_grid(replications: usize, seed: u64) -> Vec<Scenario> {
    STUDY_TRIPLES
        .iter()
        .map(|&(a, c, k)| Scenario {
            truth: Params { alpha: a, c, k },
            n: 50,
            n_outliers: 4,
            replications,
            seed,
            estimators: Method::ALL.to_vec(),
        })
        .collect()
}

/// Replaces the last `m` values by `5 · max` of the original sample.
pub fn inject_outliers(s: &Sample, m: usize) -> Result<Sample> {
    if m >= s.len() {
        return Err(Error::InvalidScenario(format!("{m} outliers in a sample of {}", s.len())));
    }
    let outlier = OUTLIER_FACTOR * s.max();
    let mut v = s.values().to_vec();
    let n = v.len();
    for x in &mut v[n - m..] {
        *x = outlier;
    }
    Sample::new(v)
}

/// Per-parameter bias and RMSE over a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRmse {
    pub bias: [f64; 3],
    pub rmse: [f64; 3],
}

pub fn bias_rmse(estimates: &[Params], truth: &Params) -> Result<BiasRmse> {
    if estimates.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    let t = truth.to_array();
    let n = estimates.len() as f64;
    let mut bias = [0.0; 3];
    let mut sq = [0.0; 3];
    for e in estimates {
        let e = e.to_array();
        for i in 0..3 {
            let d = e[i] - t[i];
            bias[i] += d;
            sq[i] += d * d;
        }
    }
    Ok(BiasRmse {
        bias: bias.map(|b| b / n),
        rmse: sq.map(|s| (s / n).sqrt()),
    })
}

/// Summary of one estimator over a scenario.
///
/// `bias` and `rmse` are `NaN` when every replication failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub estimator: Method,
    pub bias: [f64; 3],
    pub rmse: [f64; 3],
    pub failure_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub rows: Vec<MetricRow>,
}

impl ScenarioResult {
    pub fn row(&self, m: Method) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.estimator == m)
    }
}

/// Estimator settings shared by every replication.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitSettings {
    pub optim: OptimConfig,
    pub mest: MEstConfig,
    pub obre: ObreConfig,
}

/// Estimates of one replication, `None` for an error or a non-converged fit.
pub type ReplicationFits = Vec<(Method, Option<Params>)>;

/// Runs the requested estimators on one sample. ML seeds OBRE; LS seeds M.
pub fn fit_all(s: &Sample, methods: &[Method], settings: &FitSettings) -> ReplicationFits {
    let ok = |r: &Result<EstimationResult>| r.as_ref().ok().filter(|e| e.converged).map(|e| e.params);
    let wants = |m: Method| methods.contains(&m);
    let ml = (wants(Method::Ml) || wants(Method::Obre)).then(|| fit_ml(s, &settings.optim));
    let ls = (wants(Method::Ls) || wants(Method::MTukey)).then(|| fit_ls(s, &settings.optim));
    methods
        .iter()
        .map(|&m| {
            let est = match m {
                Method::Ml => ml.as_ref().and_then(ok),
                Method::Ls => ls.as_ref().and_then(ok),
                Method::MTukey => match ls.as_ref().and_then(|r| r.as_ref().ok()) {
                    Some(init) => ok(&fit_m_tukey(s, &settings.mest, Some(init.params))),
                    None => None,
                },
                Method::Obre => match ml.as_ref().and_then(|r| r.as_ref().ok()) {
                    Some(init) => ok(&fit_obre(s, &settings.obre, init.params)),
                    None => None,
                },
            };
            (m, est)
        })
        .collect()
}

/// Draws, contaminates and fits replication `r`.
pub fn run_replication(sc: &Scenario, r: usize, settings: &FitSettings) -> Result<ReplicationFits> {
    let clean = sc.truth.sample(sc.n, sc.replication_seed(r))?;
    let s = inject_outliers(&clean, sc.n_outliers)?;
    Ok(fit_all(&s, &sc.estimators, settings))
}

/// Runs a scenario with default estimator settings on the global thread pool.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioResult> {
    run_scenario_with(sc, &FitSettings::default())
}

/// Replications run in parallel; results are reduced in replication order,
/// so the output does not depend on scheduling.
pub fn run_scenario_with(sc: &Scenario, settings: &FitSettings) -> Result<ScenarioResult> {
    sc.validate()?;
    let fits: Vec<ReplicationFits> = (0..sc.replications)
        .into_par_iter()
        .map(|r| run_replication(sc, r, settings))
        .collect::<Result<_>>()?;
    Ok(summarize(sc, &fits))
}

/// Runs `f` on a pool of `jobs` threads (`0` keeps rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidScenario(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

pub fn summarize(sc: &Scenario, fits: &[ReplicationFits]) -> ScenarioResult {
    let rows = sc
        .estimators
        .iter()
        .map(|&m| {
            let est: Vec<Params> = fits
                .iter()
                .filter_map(|rep| rep.iter().find(|(mm, _)| *mm == m).and_then(|(_, p)| *p))
                .collect();
            let failure_count = fits.len() - est.len();
            let (bias, rmse) = match bias_rmse(&est, &sc.truth) {
                Ok(br) => (br.bias, br.rmse),
                Err(_) => ([f64::NAN; 3], [f64::NAN; 3]),
            };
            MetricRow {
                estimator: m,
                bias,
                rmse,
                failure_count,
            }
        })
        .collect();
    ScenarioResult {
        scenario: sc.clone(),
        rows,
    }
}

const PARAM_NAMES: [&str; 3] = ["alpha", "c", "k"];

/// One CSV row per scenario × estimator × parameter.
pub fn write_csv<W: Write>(results: &[ScenarioResult], out: W) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidScenario(format!("csv output: {e}"));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["scenario", "estimator", "parameter", "bias", "rmse", "failures"])
        .map_err(io)?;
    for res in results {
        let id = res.scenario.id();
        for row in &res.rows {
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                w.write_record([
                    id.as_str(),
                    row.estimator.as_str(),
                    name,
                    &row.bias[i].to_string(),
                    &row.rmse[i].to_string(),
                    &row.failure_count.to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidScenario(format!("csv output: {e}")))
}

/// Aligned text table: one line per scenario × estimator with
/// `bias (rmse)` for each parameter.
pub fn format_table(results: &[ScenarioResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:<8} {:>21} {:>21} {:>21} {:>8}",
        "scenario", "method", "alpha", "c", "k", "failures"
    );
    for res in results {
        for row in &res.rows {
            let cell = |i: usize| format!("{:.4} ({:.4})", row.bias[i], row.rmse[i]);
            let _ = writeln!(
                s,
                "{:<22} {:<8} {:>21} {:>21} {:>21} {:>8}",
                res.scenario.id(),
                row.estimator.as_str(),
                cell(0),
                cell(1),
                cell(2),
                row.failure_count
            );
        }
    }
    s
}

use std::io::Write;

use anyhow::Result;
use moebxii::estimators::obre::fit_obre_detailed;
use moebxii::estimators::{fit_ls, fit_m_tukey, fit_ml, EstimationResult, MEstConfig, Method, ObreConfig};
use moebxii::numkit::OptimConfig;
use moebxii::{Params, Sample};
use serde::Serialize;

use crate::dataset::Dataset;

/// Points in the exported density grid.
pub const DENSITY_POINTS: usize = 512;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub optim: OptimConfig,
    pub mest: MEstConfig,
    pub obre: ObreConfig,
}

/// One line of the report. Failed methods keep every key, with nulls, and
/// add `error`.
#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub k: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_location: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_height: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MethodReport {
    fn from_result(r: &EstimationResult, grid_max: f64) -> Self {
        let mode = fitted_mode(&r.params, grid_max);
        Self {
            method: r.method,
            alpha: Some(r.params.alpha),
            c: Some(r.params.c),
            k: Some(r.params.k),
            converged: r.converged,
            iterations: r.iterations,
            objective: r.objective.is_finite().then_some(r.objective),
            mode_location: mode.map(|m| m.0),
            mode_height: mode.map(|m| m.1),
            error: None,
        }
    }

    fn failed(method: Method, err: &anyhow::Error) -> Self {
        Self {
            method,
            alpha: None,
            c: None,
            k: None,
            converged: false,
            iterations: 0,
            objective: None,
            mode_location: None,
            mode_height: None,
            error: Some(format!("{err:#}")),
        }
    }

    pub fn params(&self) -> Option<Params> {
        Params::new(self.alpha?, self.c?, self.k?).ok()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub rule: &'static str,
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`, `⌈log₂ n⌉ + 1` of them.
    pub fn sturges(xs: &[f64]) -> Self {
        let n = xs.len();
        let bins = (n as f64).log2().ceil() as usize + 1;
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // A constant sample still gets a bin of positive width.
        let width = if hi > lo { (hi - lo) / bins as f64 } else { lo.abs().max(1.0) * 1e-3 };
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &x in xs {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self {
            rule: "sturges",
            edges,
            counts,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub label: Option<String>,
    pub n: usize,
    pub histogram: Histogram,
    pub results: Vec<MethodReport>,
}

/// Runs `methods` in order. OBRE is computed in three passes: ML, OBRE from
/// ML, then OBRE again from the first OBRE estimate with its `(A, a)` as the
/// starting scaling.
pub fn run_fit(data: &Dataset, methods: &[Method], opts: &FitOptions) -> Result<FitReport> {
    let s = data.sample()?;
    let grid_max = density_upper(&s);
    let mut ml: Option<Result<EstimationResult, String>> = None;
    let mut ml_once = |s: &Sample| -> Result<EstimationResult> {
        let r = ml.get_or_insert_with(|| fit_ml(s, &opts.optim).map_err(|e| e.to_string()));
        r.clone().map_err(anyhow::Error::msg)
    };
    let mut results = Vec::with_capacity(methods.len());
    for &m in methods {
        let r: Result<EstimationResult> = match m {
            Method::Ml => ml_once(&s),
            Method::Ls => fit_ls(&s, &opts.optim).map_err(Into::into),
            Method::MTukey => fit_m_tukey(&s, &opts.mest, None).map_err(Into::into),
            Method::Obre => ml_once(&s).and_then(|init| {
                let first = fit_obre_detailed(&s, &opts.obre, init.params, None)?;
                let second = fit_obre_detailed(&s, &opts.obre, first.result.params, Some(&first.state))?;
                Ok(second.result)
            }),
        };
        results.push(match r {
            Ok(r) => MethodReport::from_result(&r, grid_max),
            Err(e) => MethodReport::failed(m, &e),
        });
    }
    Ok(FitReport {
        label: data.label.clone(),
        n: s.len(),
        histogram: Histogram::sturges(s.values()),
        results,
    })
}

fn density_upper(s: &Sample) -> f64 {
    1.05 * s.max()
}

/// Density on `x_i = upper · i / (DENSITY_POINTS - 1)`; `None` where it
/// diverges, which can only happen at `x = 0`.
fn density_grid(p: &Params, upper: f64) -> Vec<(f64, Option<f64>)> {
    let step = upper / (DENSITY_POINTS - 1) as f64;
    (0..DENSITY_POINTS)
        .map(|i| {
            let x = step * i as f64;
            (x, p.pdf(x).ok().filter(|y| y.is_finite()))
        })
        .collect()
}

/// Mode of the fitted density on `(0, upper]`: the best grid point, refined
/// by golden section between its neighbours.
fn fitted_mode(p: &Params, upper: f64) -> Option<(f64, f64)> {
    let grid = density_grid(p, upper);
    let (i, best) = grid
        .iter()
        .enumerate()
        .filter_map(|(i, (_, y))| y.map(|y| (i, y)))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    let lo = if i == 0 { 0.0 } else { grid[i - 1].0 };
    let hi = grid[(i + 1).min(grid.len() - 1)].0;
    let f = |x: f64| if x > 0.0 { p.log_pdf(x).unwrap_or(f64::NEG_INFINITY) } else { f64::NEG_INFINITY };
    let (mut a, mut b) = (lo, hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    let y = p.pdf(x).ok().filter(|y| y.is_finite())?;
    // Keep the grid point if refinement wandered into a worse spot.
    if y >= best {
        Some((x, y))
    } else {
        Some((grid[i].0, best))
    }
}

/// Writes `x` and one fitted-density column per successful method.
pub fn write_density_csv<W: Write>(report: &FitReport, sample_max: f64, out: W) -> Result<()> {
    let fitted: Vec<(Method, Params)> = report
        .results
        .iter()
        .filter_map(|r| r.params().map(|p| (r.method, p)))
        .collect();
    let upper = 1.05 * sample_max;
    let step = upper / (DENSITY_POINTS - 1) as f64;
    let columns: Vec<Vec<Option<f64>>> = fitted
        .iter()
        .map(|(_, p)| density_grid(p, upper).into_iter().map(|(_, y)| y).collect())
        .collect();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["x".to_string()];
    header.extend(fitted.iter().map(|(m, _)| m.to_string()));
    w.write_record(&header)?;
    for i in 0..DENSITY_POINTS {
        let mut row = vec![(step * i as f64).to_string()];
        // A density that diverges at zero leaves its first cell empty.
        row.extend(columns.iter().map(|c| c[i].map_or(String::new(), |y| y.to_string())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sturges_bins_cover_every_observation() {
        let xs: Vec<f64> = (1..=65).map(|i| i as f64 * 0.7).collect();
        let h = Histogram::sturges(&xs);
        assert_eq!(h.counts.len(), 8);
        assert_eq!(h.edges.len(), 9);
        assert_eq!(h.counts.iter().sum::<usize>(), 65);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mode_of_a_unimodal_density_is_a_stationary_point() {
        let p = Params::new(3.0, 2.0, 2.0).unwrap();
        let (x, y) = fitted_mode(&p, 5.0).unwrap();
        let h = 1e-5;
        assert!(p.pdf(x - h).unwrap() <= y && p.pdf(x + h).unwrap() <= y);
    }

    #[test]
    fn only_the_origin_is_missing_when_the_density_diverges_there() {
        let p = Params::new(1.0, 0.5, 1.0).unwrap();
        let g = density_grid(&p, 3.0);
        assert_eq!(g.len(), DENSITY_POINTS);
        assert_eq!(g[0], (0.0, None));
        assert!(g[1..].iter().all(|(_, y)| y.is_some_and(|y| y.is_finite() && y >= 0.0)));
        assert!(g.windows(2).all(|w| w[0].0 < w[1].0));
    }

    proptest::proptest! {
        #[test]
        fn density_grid_is_increasing_and_nonnegative(
            la in -2.0f64..3.0, lc in -1.5f64..1.5, lk in -1.5f64..1.5, upper in 0.01f64..100.0,
        ) {
            let p = Params::from_log(&[la, lc, lk]).unwrap();
            let g = density_grid(&p, upper);
            proptest::prop_assert!(g.windows(2).all(|w| w[0].0 < w[1].0));
            proptest::prop_assert!(g[1..].iter().all(|(_, y)| y.is_some_and(|y| y >= 0.0)));
        }

        #[test]
        fn histogram_counts_every_value(xs in proptest::collection::vec(0.001f64..1e3, 1..300)) {
            let h = Histogram::sturges(&xs);
            proptest::prop_assert_eq!(h.counts.iter().sum::<usize>(), xs.len());
            proptest::prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

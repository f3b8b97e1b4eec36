//! Composite Gauss–Legendre quadrature on the unit interval.
//!
//! Integrals of the form `∫ g dF_θ` are carried to `(0, 1)` by the quantile
//! substitution, which leaves integrable logarithmic singularities at both
//! ends. The interval is therefore split into two halves, each graded
//! geometrically toward its endpoint, and every panel gets a full
//! `nodes`-point Gauss–Legendre rule. Points in the upper half are addressed
//! by their distance to 1 so that `1 - u` never loses precision.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Ratio between successive panel boundaries toward each endpoint.
const GRADING: f64 = 0.01;
/// Smallest graded boundary; the final panel reaches the endpoint itself.
const FINEST: f64 = 5e-16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Gauss–Legendre points per panel.
    pub nodes: usize,
    /// Multiplier on `nodes` for the convergence check.
    pub refine_factor: usize,
    pub tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes: 256,
            refine_factor: 2,
            tol: 1e-8,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 16 {
            return Err(Error::InvalidParams(format!(
                "quadrature needs at least 16 nodes, got {}",
                self.nodes
            )));
        }
        if self.refine_factor < 2 {
            return Err(Error::InvalidParams("refine_factor must be >= 2".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParams("quadrature tol must be positive".into()));
        }
        Ok(())
    }

    pub fn refined(&self) -> Self {
        Self {
            nodes: self.nodes * self.refine_factor,
            ..*self
        }
    }
}

/// A point of `(0, 1)` carried together with its complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPoint {
    pub u: f64,
    /// `1 - u`, exact when the point lies in the upper half.
    pub v: f64,
}

/// Which half of the unit interval a distance-to-endpoint coordinate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `u = d`
    Lower,
    /// `1 - u = d`
    Upper,
}

impl Side {
    pub fn point(self, d: f64) -> UnitPoint {
        match self {
            Side::Lower => UnitPoint { u: d, v: 1.0 - d },
            Side::Upper => UnitPoint { u: 1.0 - d, v: d },
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on the three-term recurrence.
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Cached rule of order `n`.
    pub fn cached(n: usize) -> Arc<GaussLegendre> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(GaussLegendre::new(n)))
            .clone()
    }
}

/// `(P_n(x), P_n'(x))`
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Default graded panel boundaries of one half, ascending in distance to the endpoint.
pub fn graded_boundaries() -> Vec<f64> {
    let mut b = vec![0.0];
    let mut d = 0.5;
    let mut inner = Vec::new();
    while d > FINEST {
        inner.push(d);
        d *= GRADING;
    }
    inner.reverse();
    b.extend(inner);
    b
}

/// Composite rule over `(0, 1)`, optionally with extra panel breakpoints.
#[derive(Debug, Clone)]
pub struct UnitQuadrature {
    rule: Arc<GaussLegendre>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl UnitQuadrature {
    pub fn new(nodes: usize) -> Self {
        let b = graded_boundaries();
        Self {
            rule: GaussLegendre::cached(nodes),
            lower: b.clone(),
            upper: b,
        }
    }

    pub fn order(&self) -> usize {
        self.rule.nodes.len()
    }

    /// Adds panel boundaries, e.g. at kinks of the integrand.
    pub fn with_breakpoints(mut self, breaks: &[(Side, f64)]) -> Self {
        for &(side, d) in breaks {
            if !(d > 0.0 && d < 0.5) {
                continue;
            }
            let list = match side {
                Side::Lower => &mut self.lower,
                Side::Upper => &mut self.upper,
            };
            list.push(d);
        }
        for list in [&mut self.lower, &mut self.upper] {
            list.sort_by(f64::total_cmp);
            list.dedup();
        }
        self
    }

    /// Calls `visit(point, weight)` for every node.
    pub fn for_each_node(&self, mut visit: impl FnMut(UnitPoint, f64)) {
        for (side, bounds) in [(Side::Lower, &self.lower), (Side::Upper, &self.upper)] {
            for w in bounds.windows(2) {
                let half = 0.5 * (w[1] - w[0]);
                let mid = 0.5 * (w[1] + w[0]);
                for (t, wt) in self.rule.nodes.iter().zip(&self.rule.weights) {
                    visit(side.point(mid + half * t), half * wt);
                }
            }
        }
    }

    pub fn integrate<const D: usize>(&self, mut g: impl FnMut(UnitPoint) -> [f64; D]) -> [f64; D] {
        let mut acc = [0.0; D];
        self.for_each_node(|p, w| {
            let val = g(p);
            for (a, v) in acc.iter_mut().zip(val) {
                *a += w * v;
            }
        });
        acc
    }
}

/// `∫₀¹ g(u) du`, checked against a refined rule.
///
/// Returns the refined value; fails when the two disagree by more than
/// `cfg.tol · max(1, |refined|)` in any component.
pub fn integrate01<const D: usize>(g: impl Fn(f64) -> [f64; D], cfg: &QuadratureConfig) -> Result<[f64; D]> {
    integrate01_split(|p| g(p.u), cfg, &[])
}

/// [`integrate01`] for integrands that need the exact complement near `u = 1`.
pub fn integrate01_split<const D: usize>(
    g: impl Fn(UnitPoint) -> [f64; D],
    cfg: &QuadratureConfig,
    breaks: &[(Side, f64)],
) -> Result<[f64; D]> {
    cfg.validate()?;
    let coarse = UnitQuadrature::new(cfg.nodes).with_breakpoints(breaks).integrate(&g);
    let fine = UnitQuadrature::new(cfg.refined().nodes)
        .with_breakpoints(breaks)
        .integrate(&g);
    check_refinement(&coarse, &fine, cfg.tol)?;
    Ok(fine)
}

pub(crate) fn check_refinement<const D: usize>(coarse: &[f64; D], fine: &[f64; D], tol: f64) -> Result<()> {
    let mut worst = 0.0f64;
    for (c, f) in coarse.iter().zip(fine) {
        let diff = (c - f).abs();
        if !diff.is_finite() {
            return Err(Error::QuadratureNonConvergence { diff, tol });
        }
        worst = worst.max(diff / f.abs().max(1.0));
    }
    if worst > tol {
        return Err(Error::QuadratureNonConvergence { diff: worst, tol });
    }
    Ok(())
}

//! Standardized optimal B-robust estimation.
//!
//! The estimator solves `Σᵢ W(θ, xᵢ) (s(θ, xᵢ) - a(θ)) = 0` with Huber-type
//! weights `W = min(1, c_B / ‖A (s - a)‖)`. For each `θ` the scaling matrix
//! `A` and centering vector `a` are the solution of
//!
//! ```text
//! AᵀA = M₂⁻¹,   a = ∫ W s dF_θ / ∫ W dF_θ,
//! Mₖ = ∫ Wᵏ (s - a)(s - a)ᵀ dF_θ,
//! ```
//!
//! found by fixed-point iteration. The outer loop takes the step
//! `Δθ = M₁⁻¹ · (1/n) Σ W (s - a)` until `‖Δθ‖` drops below the tolerance.
//!
//! The model expectations are integrated on the probability scale,
//! `x = Q(u)`. `W` has kinks where `‖A(s - a)‖` crosses `c_B`; those points
//! are located first and used as panel breakpoints so the composite rule
//! keeps its accuracy.

use crate::dist::{Params, Sample};
use crate::error::{Error, Result};
use crate::estimators::{check_fit_sample, EstimationResult, Method};
use crate::numkit::linalg::{dot, invert3, norm, sqrt_spd, sub3, Matrix3, Vec3};
use crate::numkit::quadrature::{check_refinement, QuadratureConfig, Side, UnitQuadrature};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObreConfig {
    /// Bound on the standardized influence; must be at least `√3`.
    pub c_b: f64,
    /// Outer stopping threshold on `‖Δθ‖`.
    pub tol: f64,
    /// Stopping threshold for the `(A, a)` fixed point, on its standardized residuals.
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub quad: QuadratureConfig,
}

impl Default for ObreConfig {
    fn default() -> Self {
        Self {
            c_b: 3.0,
            tol: 1e-6,
            inner_tol: 1e-11,
            max_outer: 200,
            max_inner: 100,
            quad: QuadratureConfig::default(),
        }
    }
}

impl ObreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_b >= 3f64.sqrt()) {
            return Err(Error::InvalidParams(format!("c_B must be >= sqrt(3), got {}", self.c_b)));
        }
        if !(self.tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::InvalidParams("OBRE tolerances must be positive".into()));
        }
        self.quad.validate()
    }
}

/// Scaling matrix, centering vector and the parameter they belong to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObreState {
    /// Lower-triangular `A` with `AᵀA = M₂⁻¹`.
    pub a_mat: Matrix3,
    /// Centering vector `a`.
    pub a_vec: Vec3,
    pub theta: Params,
}

/// Weight `W` and `ψ = W (s - a)` for one standardized, centered score.
///
/// A clipped weight is nudged down by single ulps until the computed
/// `‖A ψ‖` is at most `c_B`, so the bound holds in floating point too.
fn clip(a_mat: &Matrix3, a_vec: &Vec3, s: &Vec3, c_b: f64) -> (f64, Vec3) {
    let centered = sub3(s, a_vec);
    let len = norm(&a_mat.mul_vec(&centered));
    if !(len > c_b) {
        return (1.0, centered);
    }
    let mut w = c_b / len;
    loop {
        let psi = [w * centered[0], w * centered[1], w * centered[2]];
        if norm(&a_mat.mul_vec(&psi)) <= c_b || w == 0.0 {
            return (w, psi);
        }
        w = w.next_down();
    }
}

/// `W(θ, x)` and `ψ(θ, x)` under the state's `A` and `a`.
///
/// `‖A ψ‖ ≤ c_B` always holds; a zero-length standardized score gets weight 1.
pub fn obre_weights(st: &ObreState, x: f64, c_b: f64) -> Result<(f64, Vec3)> {
    let s = st.theta.score(x)?.to_array();
    Ok(clip(&st.a_mat, &st.a_vec, &s, c_b))
}

/// `A` with `AᵀA = m⁻¹`: the inverse of the Cholesky factor of `m`.
fn scaling_from(m: &Matrix3) -> Result<Matrix3> {
    invert3(&sqrt_spd(m)?)
}

/// Standardizing map `s ↦ z = T s - o`, i.e. `T = A` and `o = A a`.
///
/// Moments are accumulated in these coordinates, where `M₂` is close to the
/// identity, so they carry no cancellation from an ill-conditioned `M₂`.
#[derive(Debug, Clone, Copy)]
struct Frame {
    t: Matrix3,
    o: Vec3,
}

impl Frame {
    fn of(a_mat: &Matrix3, a_vec: &Vec3) -> Self {
        Self {
            t: *a_mat,
            o: a_mat.mul_vec(a_vec),
        }
    }

    fn apply(&self, s: &Vec3) -> Vec3 {
        sub3(&self.t.mul_vec(s), &self.o)
    }
}

/// Model expectations under the weights of a given `(A, a)`, in standardized
/// coordinates `z = A (s - a)`.
#[derive(Debug, Clone, Copy)]
pub struct ObreMoments {
    /// `∫ W dF`
    pub w0: f64,
    /// `∫ W z dF`
    pub wz: Vec3,
    /// `∫ W² dF`
    pub w2: f64,
    /// `∫ W² z dF`
    pub w2z: Vec3,
    /// `∫ W² z zᵀ dF`, which is `A M₂ Aᵀ`
    pub w2zz: Matrix3,
    /// `∫ W z zᵀ dF`, which is `A M₁ Aᵀ`
    pub wzz: Matrix3,
}

impl ObreMoments {
    fn from_raw(r: &[f64; 20]) -> Self {
        Self {
            w0: r[0],
            wz: [r[1], r[2], r[3]],
            w2: r[4],
            w2z: [r[5], r[6], r[7]],
            w2zz: Matrix3::from_upper([r[8], r[9], r[10], r[11], r[12], r[13]]),
            wzz: Matrix3::from_upper([r[14], r[15], r[16], r[17], r[18], r[19]]),
        }
    }

    /// `∫ W² (z - d)(z - d)ᵀ dF`: the standardized `M₂` after moving the
    /// centering by `d` in standardized units.
    fn m2_shifted(&self, d: &Vec3) -> Matrix3 {
        self.w2zz - Matrix3::outer(d, &self.w2z) - Matrix3::outer(&self.w2z, d) + Matrix3::outer(d, d).scale(self.w2)
    }
}

/// Points where `‖A(s(Q(u)) - a)‖ = c_B`, in distance-to-endpoint form.
///
/// Each side is scanned on a grid in `log d`. Sign changes are bisected. A
/// grid point closer to zero than both neighbours may hide a pair of
/// crossings, so the extremum is located by golden section and, if it lies
/// across zero, both crossings are bisected.
fn weight_kinks(theta: &Params, frame: &Frame, c_b: f64) -> Vec<(Side, f64)> {
    const PER_DECADE: usize = 12;
    const DECADES: f64 = 16.0;
    let hi = 0.5f64.ln();
    let lo = hi - DECADES * std::f64::consts::LN_10;
    let steps = (DECADES as usize) * PER_DECADE;
    let mut kinks = Vec::new();
    for side in [Side::Lower, Side::Upper] {
        let excess = |log_d: f64| {
            let s = theta.score_at_unit(side.point(log_d.exp())).to_array();
            norm(&frame.apply(&s)) - c_b
        };
        let xs: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
        let es: Vec<f64> = xs.iter().map(|&x| excess(x)).collect();
        let mut roots = Vec::new();
        for i in 1..=steps {
            let (e0, e1) = (es[i - 1], es[i]);
            if !(e0.is_finite() && e1.is_finite()) {
                continue;
            }
            if (e0 > 0.0) != (e1 > 0.0) {
                roots.push(bisect_sign(&excess, xs[i - 1], xs[i], e0));
            } else if i < steps && es[i + 1].is_finite() && e1.abs() < e0.abs() && e1.abs() < es[i + 1].abs() {
                // Minimize |excess| on the same-sign branch; a sign flip there is a hidden pair.
                let sign = e1.signum();
                let xm = golden_min(|x| sign * excess(x), xs[i - 1], xs[i + 1]);
                let em = excess(xm);
                if (em > 0.0) != (e1 > 0.0) {
                    roots.push(bisect_sign(&excess, xs[i - 1], xm, e0));
                    roots.push(bisect_sign(&excess, xm, xs[i + 1], em));
                }
            }
        }
        kinks.extend(roots.into_iter().map(|r| (side, r.exp())));
    }
    kinks
}

/// Bisection on `[a, b]` given `f(a) = fa` and a sign change across the bracket.
fn bisect_sign(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    // Brackets are at most a few tenths wide; 48 halvings reach ~1e-15.
    for _ in 0..48 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Integrates every weighted moment in one pass over a rule of `nodes`
/// points per panel, in the standardized coordinates of `(A, a)`.
pub fn obre_moments(theta: &Params, a_mat: &Matrix3, a_vec: &Vec3, c_b: f64, nodes: usize) -> ObreMoments {
    frame_moments(theta, &Frame::of(a_mat, a_vec), c_b, nodes)
}

fn frame_moments(theta: &Params, frame: &Frame, c_b: f64, nodes: usize) -> ObreMoments {
    let kinks = weight_kinks(theta, frame, c_b);
    let rule = UnitQuadrature::new(nodes).with_breakpoints(&kinks);
    ObreMoments::from_raw(&integrate_moments(&rule, theta, frame, c_b))
}

fn integrate_moments(rule: &UnitQuadrature, theta: &Params, frame: &Frame, c_b: f64) -> [f64; 20] {
    rule.integrate(|p| {
        let z = frame.apply(&theta.score_at_unit(p).to_array());
        let len = norm(&z);
        let w = if len > c_b { c_b / len } else { 1.0 };
        let w2 = w * w;
        let zz = [z[0] * z[0], z[0] * z[1], z[0] * z[2], z[1] * z[1], z[1] * z[2], z[2] * z[2]];
        let mut out = [0.0; 20];
        out[0] = w;
        out[1] = w * z[0];
        out[2] = w * z[1];
        out[3] = w * z[2];
        out[4] = w2;
        out[5] = w2 * z[0];
        out[6] = w2 * z[1];
        out[7] = w2 * z[2];
        for j in 0..6 {
            out[8 + j] = w2 * zz[j];
            out[14 + j] = w * zz[j];
        }
        out
    })
}

/// Result of the `(A, a)` fixed point together with `M₁` at the solution.
#[derive(Debug, Clone, Copy)]
pub struct AaSolution {
    pub state: ObreState,
    pub m1: Matrix3,
    pub m2: Matrix3,
    pub iterations: usize,
    /// `A M₁ Aᵀ`
    m1_std: Matrix3,
}

impl AaSolution {
    /// `M₁⁻¹ v`, evaluated as `Aᵀ (A M₁ Aᵀ)⁻¹ A v`.
    pub fn solve_m1(&self, v: &Vec3) -> Result<Vec3> {
        let a = &self.state.a_mat;
        Ok(a.transpose().mul_vec(&invert3(&self.m1_std)?.mul_vec(&a.mul_vec(v))))
    }
}

/// Solves for `A` and `a` at `theta`.
///
/// Starts from `warm` when given, else from `a = 0` and `AᵀA = J⁻¹`.
pub fn obre_solve_aa(theta: Params, c_b: f64, cfg: &ObreConfig, warm: Option<&ObreState>) -> Result<ObreState> {
    solve_aa(theta, c_b, cfg, warm).map(|s| s.state)
}

/// Inner iterate relative to a fixed reference factor `R`: `b = R a`
/// followed by the upper triangle of `B = R M₂ Rᵀ`.
type Packed = [f64; 9];

fn pack(b: &Vec3, m: &Matrix3) -> Packed {
    [b[0], b[1], b[2], m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
}

fn unpack(z: &Packed) -> (Vec3, Matrix3) {
    ([z[0], z[1], z[2]], Matrix3::from_upper([z[3], z[4], z[5], z[6], z[7], z[8]]))
}

/// Depth of the Anderson mixing history.
const ANDERSON_DEPTH: usize = 4;

/// Fixed-point iteration `(a, M₂) ↦ (∫Ws/∫W, M₂)` with `A = chol(M₂)⁻¹`,
/// accelerated by Anderson mixing.
///
/// With `B = L Lᵀ` the current scaling is `A = L⁻¹ R` and `A a = L⁻¹ b`, so
/// every factorization acts on a matrix near the identity. The loop stops
/// once the current iterate satisfies both equations to `inner_tol` in
/// standardized form: `max |A M₂ Aᵀ - I|` and `‖A ∫W(s - a)dF‖ / ∫W dF`.
/// A mixed iterate whose `B` is not positive definite is replaced by the
/// plain update and the history is cleared.
pub fn solve_aa(theta: Params, c_b: f64, cfg: &ObreConfig, warm: Option<&ObreState>) -> Result<AaSolution> {
    let (r, a0) = match warm {
        Some(st) => (st.a_mat, st.a_vec),
        None => (scaling_from(&theta.fisher_information(&QuadratureConfig::default())?)?, [0.0; 3]),
    };
    let r_inv = invert3(&r)?;
    let mut z = pack(&r.mul_vec(&a0), &Matrix3::identity());
    let mut hist_f: Vec<Packed> = Vec::new();
    let mut hist_g: Vec<Packed> = Vec::new();

    for it in 1..=cfg.max_inner {
        let (b, big_b) = unpack(&z);
        let l = sqrt_spd(&big_b)?;
        let l_inv = invert3(&l)?;
        let frame = Frame {
            t: l_inv * r,
            o: l_inv.mul_vec(&b),
        };
        let mom = frame_moments(&theta, &frame, c_b, cfg.quad.nodes);
        if !(mom.w0 > 0.0) {
            return Err(Error::Singular { det: 0.0 });
        }
        let eye = mom.w2zz.max_abs_diff(&Matrix3::identity());
        let cen = norm(&mom.wz) / mom.w0;
        if eye.max(cen) < cfg.inner_tol {
            let a_inv = r_inv * l;
            let back = |m: &Matrix3| a_inv * *m * a_inv.transpose();
            return Ok(AaSolution {
                state: ObreState {
                    a_mat: frame.t,
                    a_vec: r_inv.mul_vec(&b),
                    theta,
                },
                m1: back(&mom.wzz),
                m2: back(&mom.w2zz),
                iterations: it,
                m1_std: mom.wzz,
            });
        }

        let d = [mom.wz[0] / mom.w0, mom.wz[1] / mom.w0, mom.wz[2] / mom.w0];
        let ld = l.mul_vec(&d);
        let g = pack(
            &[b[0] + ld[0], b[1] + ld[1], b[2] + ld[2]],
            &(l * mom.m2_shifted(&d) * l.transpose()),
        );
        hist_f.push(std::array::from_fn(|i| g[i] - z[i]));
        hist_g.push(g);
        if hist_f.len() > ANDERSON_DEPTH + 1 {
            hist_f.remove(0);
            hist_g.remove(0);
        }
        z = match anderson_mix(&hist_f, &hist_g) {
            Some(mixed) if sqrt_spd(&unpack(&mixed).1).is_ok() => mixed,
            _ => {
                hist_f.clear();
                hist_g.clear();
                g
            }
        };
    }
    Err(Error::InnerNonConvergence {
        iterations: cfg.max_inner,
    })
}

/// Anderson (type II) mixing over the stored residuals `f` and images `g`:
/// `z = g_k - ΔG γ` with `γ` minimizing `‖f_k - ΔF γ‖`.
fn anderson_mix(hist_f: &[Packed], hist_g: &[Packed]) -> Option<Packed> {
    let k = hist_f.len() - 1;
    let (fk, gk) = (&hist_f[k], &hist_g[k]);
    if k == 0 {
        return Some(*gk);
    }
    let df: Vec<Packed> = (0..k).map(|j| std::array::from_fn(|i| hist_f[j + 1][i] - hist_f[j][i])).collect();
    let dg: Vec<Packed> = (0..k).map(|j| std::array::from_fn(|i| hist_g[j + 1][i] - hist_g[j][i])).collect();
    let ip = |u: &Packed, v: &Packed| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut normal: Vec<Vec<f64>> = (0..k).map(|r| (0..k).map(|c| ip(&df[r], &df[c])).collect()).collect();
    let ridge = 1e-12 * (0..k).map(|r| normal[r][r]).sum::<f64>().max(f64::MIN_POSITIVE);
    for (r, row) in normal.iter_mut().enumerate() {
        row[r] += ridge;
    }
    let rhs: Vec<f64> = (0..k).map(|r| ip(&df[r], fk)).collect();
    let gamma = solve_dense(normal, rhs)?;
    let mut z = *gk;
    for (j, gj) in gamma.iter().enumerate() {
        for i in 0..9 {
            z[i] -= gj * dg[j][i];
        }
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if !(m[piv][col].abs() > 0.0) {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| m[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    Some(x)
}

/// Fixed-point residuals of a solved state, recomputed on a rule with
/// `nodes` points per panel: `(max |AᵀA M₂ - I|, max |∫ W (s - a) dF|)`.
///
/// `AᵀA M₂ - I` is evaluated as `Aᵀ (A M₂ Aᵀ - I) A⁻ᵀ`.
pub fn fixed_point_residuals(st: &ObreState, c_b: f64, nodes: usize) -> Result<(f64, f64)> {
    let mom = obre_moments(&st.theta, &st.a_mat, &st.a_vec, c_b, nodes);
    let a_inv = invert3(&st.a_mat)?;
    let e = mom.w2zz - Matrix3::identity();
    let eye = (st.a_mat.transpose() * e * a_inv.transpose()).max_abs();
    let cen = a_inv.mul_vec(&mom.wz).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((eye, cen))
}

/// Checks that a solved state's moments agree between the configured rule
/// and its refinement.
pub fn check_quadrature(st: &ObreState, c_b: f64, quad: &QuadratureConfig) -> Result<()> {
    let frame = Frame::of(&st.a_mat, &st.a_vec);
    let kinks = weight_kinks(&st.theta, &frame, c_b);
    let coarse = integrate_moments(&UnitQuadrature::new(quad.nodes).with_breakpoints(&kinks), &st.theta, &frame, c_b);
    let fine = integrate_moments(
        &UnitQuadrature::new(quad.refined().nodes).with_breakpoints(&kinks),
        &st.theta,
        &frame,
        c_b,
    );
    check_refinement(&coarse, &fine, quad.tol)
}

/// Empirical `ψ̄ = (1/n) Σ W(θ, xᵢ)(s(θ, xᵢ) - a)`.
fn empirical_psi(st: &ObreState, logs: &[f64], c_b: f64) -> Vec3 {
    let mut acc = [0.0; 3];
    for &lx in logs {
        let s = st.theta.score_at_log(lx).to_array();
        let (_, psi) = clip(&st.a_mat, &st.a_vec, &s, c_b);
        for i in 0..3 {
            acc[i] += psi[i];
        }
    }
    let n = logs.len() as f64;
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

/// Full OBRE fit with the converged `(A, a)` state.
#[derive(Debug, Clone, Copy)]
pub struct ObreFit {
    pub result: EstimationResult,
    pub state: ObreState,
}

/// OBRE from `init` (typically the ML estimate).
pub fn fit_obre(s: &Sample, cfg: &ObreConfig, init: Params) -> Result<EstimationResult> {
    fit_obre_detailed(s, cfg, init, None).map(|f| f.result)
}

/// OBRE returning the final state; `warm` seeds the first `(A, a)` solve.
pub fn fit_obre_detailed(s: &Sample, cfg: &ObreConfig, init: Params, warm: Option<&ObreState>) -> Result<ObreFit> {
    check_fit_sample(s)?;
    cfg.validate()?;
    // Sorted so the sums, and hence the estimate, ignore sample order.
    let logs: Vec<f64> = s.sorted().iter().map(|x| x.ln()).collect();
    let standardized = |st: &ObreState, psi: &Vec3| norm(&st.a_mat.mul_vec(psi));

    let mut sol = solve_aa(init, cfg.c_b, cfg, warm)?;
    let mut psi = empirical_psi(&sol.state, &logs, cfg.c_b);
    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<(Vec3, f64)> = None;

    while iterations < cfg.max_outer {
        iterations += 1;
        let step = sol.solve_m1(&psi)?;
        if norm(&step) <= cfg.tol {
            converged = true;
            break;
        }
        let current = standardized(&sol.state, &psi);
        let theta = sol.state.theta.to_array();

        // A step that reverses the previous one starts from half its length,
        // which breaks the two-cycles the scoring step can fall into.
        let mut lambda = match last {
            Some((prev, prev_lambda)) if dot(&prev, &step) < 0.0 => 0.5 * prev_lambda,
            _ => 1.0,
        };
        // Step halving keeps θ positive and the standardized ψ̄ from growing.
        let mut next = None;
        for _ in 0..=10 {
            let cand = [
                theta[0] + lambda * step[0],
                theta[1] + lambda * step[1],
                theta[2] + lambda * step[2],
            ];
            if let Ok(p) = Params::from_array(cand) {
                if let Ok(cand_sol) = solve_aa(p, cfg.c_b, cfg, Some(&sol.state)) {
                    let cand_psi = empirical_psi(&cand_sol.state, &logs, cfg.c_b);
                    if standardized(&cand_sol.state, &cand_psi) <= current {
                        next = Some((cand_sol, cand_psi));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        // Slow or failed scoring steps are compared with a Newton step.
        let scored = next.as_ref().map(|(ns, np)| standardized(&ns.state, np));
        if scored.map_or(true, |v| v > 0.5 * current) {
            if let Some((ns, np)) = newton_fallback(&sol, &psi, &logs, cfg, current) {
                if scored.map_or(true, |v| standardized(&ns.state, &np) < v) {
                    next = Some((ns, np));
                    lambda = 0.0;
                }
            }
        }
        match next {
            Some((ns, np)) => {
                sol = ns;
                psi = np;
                last = (lambda > 0.0).then_some((step, lambda));
            }
            None => break,
        }
    }

    let objective = standardized(&sol.state, &psi);
    Ok(ObreFit {
        result: EstimationResult {
            params: sol.state.theta,
            method: Method::Obre,
            converged,
            iterations,
            objective,
        },
        state: sol.state,
    })
}

/// Newton step on `ψ̄(θ) = 0` in log-parameter space with a central-difference
/// Jacobian, halved until the standardized norm does not exceed `current`.
///
/// Backs up the scoring step `M₁⁻¹ ψ̄`: `M₁` is the model expectation of the
/// Jacobian, so for a small contaminated sample that step can stall or point
/// uphill, whereas the empirical Jacobian cannot.
fn newton_fallback(
    sol: &AaSolution,
    psi: &Vec3,
    logs: &[f64],
    cfg: &ObreConfig,
    current: f64,
) -> Option<(AaSolution, Vec3)> {
    const H: f64 = 1e-5;
    let base = sol.state.theta.to_log();
    let psi_at = |v: &Vec3| -> Option<Vec3> {
        let p = Params::from_log(v).ok()?;
        let st = solve_aa(p, cfg.c_b, cfg, Some(&sol.state)).ok()?;
        Some(empirical_psi(&st.state, logs, cfg.c_b))
    };
    let mut jac = Matrix3::ZERO;
    for j in 0..3 {
        let mut up = base;
        let mut dn = base;
        up[j] += H;
        dn[j] -= H;
        let (pu, pd) = (psi_at(&up)?, psi_at(&dn)?);
        for i in 0..3 {
            jac[(i, j)] = (pu[i] - pd[i]) / (2.0 * H);
        }
    }
    let d = invert3(&jac).ok()?.mul_vec(psi);
    let mut lambda = 1.0;
    for _ in 0..=10 {
        let cand = [base[0] - lambda * d[0], base[1] - lambda * d[1], base[2] - lambda * d[2]];
        if let Ok(p) = Params::from_log(&cand) {
            if let Ok(cand_sol) = solve_aa(p, cfg.c_b, cfg, Some(&sol.state)) {
                let cand_psi = empirical_psi(&cand_sol.state, logs, cfg.c_b);
                if norm(&cand_sol.state.a_mat.mul_vec(&cand_psi)) <= current {
                    return Some((cand_sol, cand_psi));
                }
            }
        }
        lambda *= 0.5;
    }
    None
}

/// Per-observation weights and `‖A ψᵢ‖` at a state.
pub fn sample_weights(st: &ObreState, s: &Sample, c_b: f64) -> Result<Vec<(f64, f64)>> {
    s.values()
        .iter()
        .map(|&x| {
            let (w, psi) = obre_weights(st, x, c_b)?;
            Ok((w, norm(&st.a_mat.mul_vec(&psi))))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> Params {
        Params::new(3.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn unclipped_and_clipped_weights() {
        let st = ObreState {
            a_mat: Matrix3::identity(),
            a_vec: [0.0; 3],
            theta: theta(),
        };
        let s = [1.0, 0.0, 0.0];
        let (w, psi) = clip(&st.a_mat, &st.a_vec, &s, 3.0);
        assert_eq!(w, 1.0);
        assert_eq!(psi, s);
        let s = [6.0, 0.0, 0.0];
        let (w, psi) = clip(&st.a_mat, &st.a_vec, &s, 3.0);
        assert_eq!(w, 0.5);
        assert_eq!(psi, [3.0, 0.0, 0.0]);
        let (w, _) = clip(&st.a_mat, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 3.0);
        assert_eq!(w, 1.0);
    }

    #[test]
    fn config_validation() {
        let cfg = ObreConfig {
            c_b: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ObreConfig::default().validate().is_ok());
    }

    #[test]
    fn huge_bound_reduces_to_fisher_information() {
        let cfg = ObreConfig::default();
        let sol = solve_aa(theta(), 1e6, &cfg, None).unwrap();
        let j = theta().fisher_information(&cfg.quad).unwrap();
        for v in sol.state.a_vec {
            assert!(v.abs() < 1e-8);
        }
        assert!(sol.m2.max_abs_diff(&j) < 1e-7 * j.max_abs());
    }

    #[test]
    fn gram_matches_inverse_of_m2() {
        let cfg = ObreConfig::default();
        let sol = solve_aa(theta(), 3.0, &cfg, None).unwrap();
        let gram = sol.state.a_mat.transpose() * sol.state.a_mat;
        assert!(gram.is_symmetric(1e-10));
        assert!(gram.leading_minors().iter().all(|m| *m > 0.0));
        let (eye, cen) = fixed_point_residuals(&sol.state, 3.0, cfg.quad.nodes).unwrap();
        assert!(eye < 1e-6, "{eye}");
        assert!(cen < 1e-6, "{cen}");
        check_quadrature(&sol.state, 3.0, &cfg.quad).unwrap();
    }
}

//! The Marshall–Olkin extended Burr XII distribution.
//!
//! With baseline Burr XII survival `t(x) = (1 + x^c)^(-k)` the tilted
//! survival function is `α t / (1 - (1 - α) t)`. Everything here is written
//! in terms of `log x` and `log1p(x^c)` so the far tails neither overflow nor
//! collapse to zero.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::linalg::{Matrix3, Vec3};
use crate::numkit::quadrature::{integrate01_split, QuadratureConfig, UnitPoint};

/// Parameter triple `(α, c, k)`, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub alpha: f64,
    pub c: f64,
    pub k: f64,
}

impl Params {
    pub fn new(alpha: f64, c: f64, k: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("c", c), ("k", k)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { alpha, c, k })
    }

    pub fn from_array(v: Vec3) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(&self) -> Vec3 {
        [self.alpha, self.c, self.k]
    }

    pub fn from_log(v: &Vec3) -> Result<Self> {
        Self::new(v[0].exp(), v[1].exp(), v[2].exp())
    }

    pub fn to_log(&self) -> Vec3 {
        [self.alpha.ln(), self.c.ln(), self.k.ln()]
    }

    /// Density at `x >= 0`.
    ///
    /// At `x = 0` the density is `0` for `c > 1` and `c k / α` for `c = 1`;
    /// it diverges for `c < 1`, which is reported as a domain error.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        check_support(x)?;
        if x == 0.0 {
            return match self.c.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Greater) => Ok(0.0),
                Some(std::cmp::Ordering::Equal) => Ok(self.c * self.k / self.alpha),
                _ => Err(Error::Domain(format!("density diverges at x = 0 for c = {} < 1", self.c))),
            };
        }
        Ok(self.log_pdf(x)?.exp())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_support(x)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        let kt = Kernel::new(self, x.ln());
        Ok(kt.one_minus_t / kt.h)
    }

    pub fn survival(&self, x: f64) -> Result<f64> {
        check_support(x)?;
        if x == 0.0 {
            return Ok(1.0);
        }
        let kt = Kernel::new(self, x.ln());
        Ok(self.alpha * kt.t / kt.h)
    }

    /// Analytic inverse of the cdf for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile needs 0 < u < 1, got {u}")));
        }
        Ok(self.log_quantile(UnitPoint { u, v: 1.0 - u }).exp())
    }

    /// `log Q(u)`, using whichever of `u` or `1 - u` is exact.
    pub fn log_quantile(&self, p: UnitPoint) -> f64 {
        let a = self.alpha;
        // m = -log t with t = (1 - u) / (1 - (1 - α) u)
        let m = if p.u <= 0.5 {
            (-(1.0 - a) * p.u).ln_1p() - (-p.u).ln_1p()
        } else {
            (a + (1.0 - a) * p.v).ln() - p.v.ln()
        };
        let y = m / self.k;
        // log(expm1(y)) without overflow
        let log_em1 = if y > 30.0 { y + (-(-y).exp()).ln_1p() } else { y.exp_m1().ln() };
        log_em1 / self.c
    }

    /// Single-observation log-likelihood term.
    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        check_positive(x)?;
        Ok(self.log_pdf_at_log(x.ln()))
    }

    pub(crate) fn log_pdf_at_log(&self, lx: f64) -> f64 {
        let kt = Kernel::new(self, lx);
        (self.alpha * self.c * self.k).ln() + (self.c - 1.0) * lx - (self.k + 1.0) * kt.lp - 2.0 * kt.h.ln()
    }

    /// Gradient of `log f(x)` with respect to `(α, c, k)`.
    pub fn score(&self, x: f64) -> Result<ScoreVec> {
        check_positive(x)?;
        Ok(self.score_at_log(x.ln()))
    }

    pub fn score_at_log(&self, lx: f64) -> ScoreVec {
        let Params { alpha, c, k } = *self;
        let kt = Kernel::new(self, lx);
        let tilt = (1.0 - alpha) * kt.t / kt.h;
        ScoreVec {
            d_alpha: 1.0 / alpha - 2.0 * kt.t / kt.h,
            d_c: 1.0 / c + lx - (k + 1.0) * kt.q * lx - 2.0 * k * tilt * kt.q * lx,
            d_k: 1.0 / k - kt.lp - 2.0 * tilt * kt.lp,
        }
    }

    /// Score at the quantile point `Q(u)`.
    pub fn score_at_unit(&self, p: UnitPoint) -> ScoreVec {
        self.score_at_log(self.log_quantile(p))
    }

    /// `n` inverse-transform draws from a ChaCha8 stream seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        let values = (0..n)
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                self.log_quantile(UnitPoint { u, v: 1.0 - u }).exp()
            })
            .collect();
        Sample::new(values)
    }

    /// Fisher information `∫ s sᵀ dF`, integrated in the probability scale.
    pub fn fisher_information(&self, quad: &QuadratureConfig) -> Result<Matrix3> {
        let upper = integrate01_split(
            |p| {
                let s = self.score_at_unit(p).to_array();
                [s[0] * s[0], s[0] * s[1], s[0] * s[2], s[1] * s[1], s[1] * s[2], s[2] * s[2]]
            },
            quad,
            &[],
        )?;
        Ok(Matrix3::from_upper(upper))
    }
}

impl std::fmt::Display for Params {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.alpha, self.c, self.k)
    }
}

fn check_support(x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("x must be finite and >= 0, got {x}")))
    }
}

fn check_positive(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("x must be finite and > 0, got {x}")))
    }
}

/// Shared intermediate quantities at one abscissa.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    /// `log(1 + x^c)`
    pub lp: f64,
    /// `(1 + x^c)^(-k)`
    pub t: f64,
    /// `1 - t`
    pub one_minus_t: f64,
    /// `1 - (1 - α) t`
    pub h: f64,
    /// `x^c / (1 + x^c)`
    pub q: f64,
}

impl Kernel {
    pub fn new(p: &Params, lx: f64) -> Self {
        let z = p.c * lx;
        // log1p(e^z) and the logistic function, both stable in either tail
        let (lp, q) = if z > 0.0 {
            let e = (-z).exp();
            (z + e.ln_1p(), 1.0 / (1.0 + e))
        } else {
            let e = z.exp();
            (e.ln_1p(), e / (1.0 + e))
        };
        let t = (-p.k * lp).exp();
        let one_minus_t = -(-p.k * lp).exp_m1();
        let h = 1.0 - (1.0 - p.alpha) * t;
        Self { lp, t, one_minus_t, h, q }
    }
}

/// Per-observation score `∂ log f / ∂(α, c, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreVec {
    pub d_alpha: f64,
    pub d_c: f64,
    pub d_k: f64,
}

impl ScoreVec {
    pub fn to_array(&self) -> Vec3 {
        [self.d_alpha, self.d_c, self.d_k]
    }
}

/// A non-empty sample of non-negative observations, kept in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::SampleTooSmall { needed: 1, got: 0 });
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("observations must be finite and >= 0, got {bad}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Sum of log-density terms.
    pub fn log_likelihood(&self, p: &Params) -> Result<f64> {
        self.values.iter().map(|&x| p.log_pdf(x)).sum()
    }
}

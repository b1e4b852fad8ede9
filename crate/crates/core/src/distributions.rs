//! Poisson, Gamma and negative-binomial quantities.
//!
//! Counts are modelled as Poisson with a Gamma(shape, rate) prior on the
//! rate. Integrating the rate out yields a negative binomial. Every mass
//! function here is evaluated in log space via the log-gamma function and
//! only exponentiated at the boundary.
//!
//! Convention: `NbParams { r, p }` has pmf
//! `Γ(x + r) / (x! Γ(r)) · p^r · (1 − p)^x`, so the Gamma posterior
//! `(shape, rate)` maps to `r = shape`, `p = rate / (rate + 1)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// A ringdown count: threshold crossings in one window or one hit.
pub type Count = u64;

/// Gamma distribution in shape/rate form.
///
/// Conjugate updates are tallied as integers on top of the base parameters,
/// so staged and one-shot updates give bit-identical results.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "RawGamma", into = "RawGamma")]
pub struct GammaParams {
    base_shape: f64,
    base_rate: f64,
    n_obs: u64,
    sum_x: u64,
}

impl PartialEq for GammaParams {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.rate() == other.rate()
    }
}

#[derive(Serialize, Deserialize)]
struct RawGamma {
    shape: f64,
    rate: f64,
}

impl TryFrom<RawGamma> for GammaParams {
    type Error = crate::Error;
    fn try_from(raw: RawGamma) -> Result<Self> {
        GammaParams::new(raw.shape, raw.rate)
    }
}

impl From<GammaParams> for RawGamma {
    fn from(g: GammaParams) -> Self {
        RawGamma {
            shape: g.shape(),
            rate: g.rate(),
        }
    }
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return domain(format!("gamma shape must be finite and > 0, got {shape}"));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return domain(format!("gamma rate must be finite and > 0, got {rate}"));
        }
        Ok(Self {
            base_shape: shape,
            base_rate: rate,
            n_obs: 0,
            sum_x: 0,
        })
    }

    /// The unit prior `a = b = 1`.
    pub fn unit() -> Self {
        Self {
            base_shape: 1.0,
            base_rate: 1.0,
            n_obs: 0,
            sum_x: 0,
        }
    }

    pub fn shape(&self) -> f64 {
        self.base_shape + self.sum_x as f64
    }

    pub fn rate(&self) -> f64 {
        self.base_rate + self.n_obs as f64
    }

    pub fn mean(&self) -> f64 {
        self.shape() / self.rate()
    }

    /// Log density at `lambda > 0`.
    pub fn ln_pdf(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape(), self.rate());
        a * b.ln() - ln_gamma(a) + (a - 1.0) * lambda.ln() - b * lambda
    }

    /// Posterior after observing `n_obs` counts summing to `sum_x`.
    pub fn updated(&self, n_obs: u64, sum_x: u64) -> Self {
        Self {
            n_obs: self.n_obs + n_obs,
            sum_x: self.sum_x + sum_x,
            ..*self
        }
    }
}

/// Negative binomial in the `(r, p)` convention documented at module level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "RawNb", into = "RawNb")]
pub struct NbParams {
    r: f64,
    p: f64,
    ln_p: f64,
    ln_q: f64,
}

#[derive(Serialize, Deserialize)]
struct RawNb {
    r: f64,
    p: f64,
}

impl TryFrom<RawNb> for NbParams {
    type Error = crate::Error;
    fn try_from(raw: RawNb) -> Result<Self> {
        NbParams::new(raw.r, raw.p)
    }
}

impl From<NbParams> for RawNb {
    fn from(nb: NbParams) -> Self {
        RawNb { r: nb.r, p: nb.p }
    }
}

impl PartialEq for NbParams {
    fn eq(&self, other: &Self) -> bool {
        self.r == other.r && self.p == other.p
    }
}

impl NbParams {
    pub fn new(r: f64, p: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return domain(format!(
                "negative-binomial r must be finite and > 0, got {r}"
            ));
        }
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("negative-binomial p must lie in (0, 1), got {p}"));
        }
        Ok(Self {
            r,
            p,
            ln_p: p.ln(),
            ln_q: (-p).ln_1p(),
        })
    }

    /// Posterior predictive of a Gamma(shape, rate) mixing distribution.
    ///
    /// `ln(1 − p)` is taken as `−ln(rate + 1)` so that large rates keep full
    /// precision instead of going through a rounded `p`.
    pub fn from_gamma(g: GammaParams) -> Self {
        let rate = g.rate();
        let ln_rate1 = rate.ln_1p();
        Self {
            r: g.shape(),
            p: rate / (rate + 1.0),
            ln_p: rate.ln() - ln_rate1,
            ln_q: -ln_rate1,
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mean(&self) -> f64 {
        self.r * (1.0 - self.p) / self.p
    }

    pub fn ln_pmf(&self, x: Count) -> f64 {
        let xf = x as f64;
        let coeff = if x == 0 {
            0.0
        } else {
            ln_gamma(xf + self.r) - ln_gamma(self.r) - ln_gamma(xf + 1.0)
        };
        coeff + self.r * self.ln_p + xf * self.ln_q
    }

    /// Smallest count maximising the pmf.
    pub fn mode(&self) -> Count {
        if self.r <= 1.0 {
            0
        } else {
            ((self.r - 1.0) * (1.0 - self.p) / self.p).floor() as Count
        }
    }
}

pub fn poisson_ln_pmf(x: Count, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return domain(format!("poisson rate must be finite and > 0, got {lambda}"));
    }
    let xf = x as f64;
    Ok(-lambda + xf * lambda.ln() - ln_gamma(xf + 1.0))
}

/// `e^{−λ} λ^x / x!`.
pub fn poisson_pmf(x: Count, lambda: f64) -> Result<f64> {
    poisson_ln_pmf(x, lambda).map(f64::exp)
}

/// Conjugate update with every datum in one group: `(a + Σx, b + N)`.
pub fn gamma_posterior(prior: GammaParams, data: &[Count]) -> GammaParams {
    let sum: u64 = data.iter().sum();
    prior.updated(data.len() as u64, sum)
}

/// Posterior predictive after `n_obs` counts summing to `sum_x`:
/// `r = sum_x + a`, `p = (n_obs + b) / (n_obs + b + 1)`.
///
/// With `n_obs = 0` this is the prior predictive used for empty components.
pub fn predictive_update(prior: GammaParams, n_obs: u64, sum_x: u64) -> Result<NbParams> {
    if n_obs == 0 && sum_x != 0 {
        return domain(format!("sum_x = {sum_x} with no observations"));
    }
    Ok(NbParams::from_gamma(prior.updated(n_obs, sum_x)))
}

pub fn nb_pmf(x: Count, params: &NbParams) -> f64 {
    params.ln_pmf(x).exp()
}

/// Negative log-likelihood `−ln nb_pmf(x)`, evaluated without leaving log space.
pub fn nll(x: Count, params: &NbParams) -> f64 {
    // Rounding can leave a hair below zero when the pmf is 1 - ε.
    (-params.ln_pmf(x)).max(0.0)
}

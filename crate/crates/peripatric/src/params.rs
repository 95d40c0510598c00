//! Model parameters for the finite-size metapopulation.
//!
//! A parameter set couples the main-population size `N` with the colony
//! size fraction `eps` (colony size `eps * N`, an integer number of
//! individuals), the limit emigration and fusion parameters `theta` and
//! `gamma`, and the density-dependence exponent `alpha`. The per-capita
//! finite-size rates are derived as
//!
//! ```text
//! theta_N = theta / (eps * N^2)        (emigration, per individual)
//! gamma_N = gamma * eps^(alpha-1) / N  (fusion, per colony, times k^(alpha-1))
//! ```

use crate::error::{Error, Result};
use serde::Serialize;

/// Validated parameter set with derived per-capita rates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModelParams {
    /// Main population size.
    pub n_big: u64,
    /// Colony size fraction; always exactly `eps_n / n_big`.
    pub eps: f64,
    /// Colony size in individuals (`eps * N`, integral by construction).
    pub eps_n: u64,
    /// Limit emigration parameter.
    pub theta: f64,
    /// Limit fusion parameter.
    pub gamma: f64,
    /// Density-dependence exponent (>= 1).
    pub alpha: f64,
    /// Derived per-individual emigration rate.
    pub theta_n: f64,
    /// Derived per-colony fusion rate coefficient.
    pub gamma_n: f64,
}

impl ModelParams {
    /// Build and validate a parameter set. `eps * n_big` must be within
    /// 1e-6 of an integer >= 2; `eps` is then snapped to exactly
    /// `round(eps * n_big) / n_big`.
    pub fn new(n_big: u64, eps: f64, theta: f64, gamma: f64, alpha: f64) -> Result<Self> {
        if n_big == 0 {
            return Err(Error::InvalidParams("N must be a positive integer".into()));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParams(format!(
                "eps must lie in (0, 1), got {eps}"
            )));
        }
        let raw = eps * n_big as f64;
        let eps_n = raw.round();
        if (raw - eps_n).abs() > 1e-6 {
            return Err(Error::InvalidParams(format!(
                "eps * N must be a whole number of individuals; eps={eps}, N={n_big} gives {raw}"
            )));
        }
        if eps_n < 2.0 {
            return Err(Error::InvalidParams(format!(
                "colony size eps * N must be at least 2, got {eps_n}"
            )));
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParams(format!(
                "theta must be a positive real, got {theta}"
            )));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParams(format!(
                "gamma must be a positive real, got {gamma}"
            )));
        }
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidParams(format!(
                "alpha must be >= 1, got {alpha}"
            )));
        }
        let eps_exact = eps_n / n_big as f64;
        let n_f = n_big as f64;
        let theta_n = theta / (eps_exact * n_f * n_f);
        let gamma_n = gamma * pow_real(eps_exact, alpha - 1.0) / n_f;
        if !(theta_n > 0.0) || !(gamma_n > 0.0) {
            return Err(Error::InvalidParams(
                "derived rates theta_N and gamma_N must be strictly positive".into(),
            ));
        }
        Ok(Self {
            n_big,
            eps: eps_exact,
            eps_n: eps_n as u64,
            theta,
            gamma,
            alpha,
            theta_n,
            gamma_n,
        })
    }

    /// Build with the colony size given directly in individuals.
    pub fn with_colony_size(
        n_big: u64,
        eps_n: u64,
        theta: f64,
        gamma: f64,
        alpha: f64,
    ) -> Result<Self> {
        if n_big == 0 {
            return Err(Error::InvalidParams("N must be a positive integer".into()));
        }
        Self::new(n_big, eps_n as f64 / n_big as f64, theta, gamma, alpha)
    }

    /// The default fraction rule for convergence studies: colony size
    /// `m = round(N^(2/3))`, i.e. `eps ~ N^(-1/3)`, so that `eps -> 0`
    /// while `eps * N -> infinity` with an integral colony size.
    pub fn with_eps_rule(n_big: u64, theta: f64, gamma: f64, alpha: f64) -> Result<Self> {
        let m = (n_big as f64).powf(2.0 / 3.0).round().max(2.0) as u64;
        Self::with_colony_size(n_big, m, theta, gamma, alpha)
    }

    /// `k^alpha` with the exact fast path at `alpha = 1`.
    #[inline]
    pub fn pow_alpha(&self, k: f64) -> f64 {
        if self.alpha == 1.0 {
            k
        } else {
            k.powf(self.alpha)
        }
    }

    /// Mean of the stationary colony-count weights, `N * theta_N / gamma_N`.
    pub fn lambda(&self) -> f64 {
        self.n_big as f64 * self.theta_n / self.gamma_n
    }
}

/// `x^y` with exact fast paths at `y = 0` and `y = 1`.
#[inline]
pub(crate) fn pow_real(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        1.0
    } else if y == 1.0 {
        x
    } else {
        x.powf(y)
    }
}

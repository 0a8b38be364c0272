//! Model constants and the reaction term.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{DomainSpec, ScalarField};

/// `s^gamma` for `s >= 0` via `exp(gamma ln s)`, with `0^gamma = 0`.
#[inline]
pub fn pow_gamma(s: f64, gamma: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (gamma * s.ln()).exp()
    }
}

/// Reaction term `f(n)` of the cell equation.
#[derive(Clone, Default)]
pub enum Reaction {
    /// `f(s) = r s - mu s^gamma`.
    #[default]
    Logistic,
    /// Any `f` with `f(0) = 0` and `f(s) <= r s - mu s^gamma`; checked by
    /// [`Params::check_reaction`] on a sample grid.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Reaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reaction::Logistic => write!(f, "Logistic"),
            Reaction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Params {
    /// Growth rate.
    pub r: f64,
    /// Degradation strength.
    pub mu: f64,
    /// Degradation exponent, `> 1`.
    pub gamma: f64,
    /// Convective switch, 0 (Stokes) or 1 (Navier-Stokes).
    pub kappa: f64,
    /// Regularization strength.
    pub epsilon: f64,
    /// Initial-data regularity exponent in `(0, 1/4)`; only enters `beta`.
    pub sigma: f64,
    /// Gravitational potential.
    pub potential: ScalarField,
    pub reaction: Reaction,
}

impl Params {
    /// Logistic parameters with potential `phi(x, y) = -gravity * y`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        domain: DomainSpec,
        r: f64,
        mu: f64,
        gamma: f64,
        kappa: f64,
        epsilon: f64,
        sigma: f64,
        gravity: f64,
    ) -> Result<Self> {
        let potential = ScalarField::from_fn(domain, |_, y| -gravity * y)?;
        let p = Params {
            r,
            mu,
            gamma,
            kappa,
            epsilon,
            sigma,
            potential,
            reaction: Reaction::Logistic,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !self.r.is_finite() {
            return bad(format!("r must be finite, got {}", self.r));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return bad(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if self.kappa != 0.0 && self.kappa != 1.0 {
            return bad(format!("kappa must be 0 or 1, got {}", self.kappa));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.25) {
            return bad(format!("sigma must lie in (0, 1/4), got {}", self.sigma));
        }
        self.potential.ensure_finite("potential")?;
        if let Reaction::Custom(f) = &self.reaction {
            if f(0.0) != 0.0 {
                return bad("custom reaction must satisfy f(0) = 0".into());
            }
        }
        Ok(())
    }

    /// The reaction term `f(s)`.
    #[inline]
    pub fn f(&self, s: f64) -> f64 {
        match &self.reaction {
            Reaction::Logistic => self.logistic(s),
            Reaction::Custom(f) => f(s),
        }
    }

    /// Upper envelope `r s - mu s^gamma`.
    #[inline]
    pub fn logistic(&self, s: f64) -> f64 {
        self.r * s - self.mu * pow_gamma(s, self.gamma)
    }

    /// `r_+ = max(r, 0)`.
    pub fn r_plus(&self) -> f64 {
        self.r.max(0.0)
    }

    /// Exponent of the fractional signal bound, `min(2 sigma, gamma - 1)`.
    pub fn beta(&self) -> f64 {
        (2.0 * self.sigma).min(self.gamma - 1.0)
    }

    /// Exponent of the fractional velocity bound, `min(1/2, gamma - 1)`.
    pub fn delta(&self) -> f64 {
        0.5f64.min(self.gamma - 1.0)
    }

    /// Rate bound `|r| + mu gamma s^(gamma-1) + 2 eps s` dominating `|f'(s)|`
    /// and `|d/ds (f(s) - eps s^2)|` at `s`.
    pub fn reaction_rate_bound(&self, s: f64) -> f64 {
        self.r.abs() + self.mu * self.gamma * pow_gamma(s, self.gamma - 1.0) + 2.0 * self.epsilon * s
    }

    /// Checks `f(0) = 0` and `f(s) <= r s - mu s^gamma` on `samples` points in
    /// `[0, 10 max_n]`.
    pub fn check_reaction(&self, max_n: f64, samples: usize) -> Result<()> {
        if self.f(0.0) != 0.0 {
            return Err(Error::InvalidParams("reaction violates f(0) = 0".into()));
        }
        let top = 10.0 * max_n.max(1e-12);
        for k in 0..=samples {
            let s = top * k as f64 / samples.max(1) as f64;
            let (fs, env) = (self.f(s), self.logistic(s));
            if fs > env + 1e-12 * env.abs().max(1.0) {
                return Err(Error::InvalidParams(format!(
                    "reaction exceeds logistic envelope at s = {s}: {fs} > {env}"
                )));
            }
        }
        Ok(())
    }
}

//! Growth laws, chemostat parameters and validation of the standing
//! assumptions on the specific growth rate.
//!
//! The model couples a bacteria count `x` with a substrate concentration
//! `s`: divisions occur at rate `mu(s) * x`, washouts at rate `D * x`, and
//! between jumps the substrate follows
//! `s' = D (s_in - s) - k mu(s) x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Specific growth rate `mu`. Every law must be zero at zero, strictly
/// increasing and continuously differentiable on `[0, inf)`; `deriv` may
/// alternatively return a local Lipschitz bound for laws that are Lipschitz
/// but not C^1 (the admissible-exponent computation only uses it near the
/// single-individual equilibrium). Adding a variant requires supplying both
/// `eval` and `deriv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GrowthLaw {
    /// `mu(s) = c * s`.
    Linear { c: f64 },
    /// `mu(s) = m * s / (K + s)`, the canonical saturating chemostat law.
    Monod { m: f64, half_saturation: f64 },
}

impl GrowthLaw {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            GrowthLaw::Linear { c } => c * s,
            GrowthLaw::Monod { m, half_saturation } => m * s / (half_saturation + s),
        }
    }

    pub fn deriv(&self, s: f64) -> f64 {
        match *self {
            GrowthLaw::Linear { c } => c,
            GrowthLaw::Monod { m, half_saturation } => {
                let d = half_saturation + s;
                m * half_saturation / (d * d)
            }
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            GrowthLaw::Linear { c } => c > 0.0 && c.is_finite(),
            GrowthLaw::Monod { m, half_saturation } => {
                m > 0.0 && m.is_finite() && half_saturation > 0.0 && half_saturation.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("growth-law constants must be positive and finite, got {self:?}")))
        }
    }
}

/// Chemostat parameters: dilution rate `D`, input substrate concentration
/// `s_in`, inverse yield `k` and the growth law. The single-individual
/// substrate equilibrium `s_bar_1` is solved once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChemostatParams {
    d: f64,
    s_in: f64,
    k: f64,
    growth: GrowthLaw,
    s_bar_1: f64,
}

impl ChemostatParams {
    pub fn new(d: f64, s_in: f64, k: f64, growth: GrowthLaw) -> Result<Self> {
        for (name, v) in [("D", d), ("s_in", s_in), ("k", k)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("parameter `{name}` must be positive and finite, got {v}")));
            }
        }
        growth.check()?;
        // D (s_in - s) - k mu(s) is strictly decreasing with a sign change on
        // (0, s_in), so the equilibrium exists and is unique.
        let s_bar_1 = numeric::bisect(|s| d * (s_in - s) - k * growth.eval(s), 0.0, s_in)?;
        Ok(ChemostatParams { d, s_in, k, growth, s_bar_1 })
    }

    pub fn dilution(&self) -> f64 {
        self.d
    }

    pub fn s_in(&self) -> f64 {
        self.s_in
    }

    pub fn yield_inverse(&self) -> f64 {
        self.k
    }

    pub fn growth(&self) -> &GrowthLaw {
        &self.growth
    }

    /// Substrate equilibrium with exactly one individual; the upper edge of
    /// the invariant set `N* x (0, s_bar_1)`.
    pub fn s_bar_1(&self) -> f64 {
        self.s_bar_1
    }

    #[inline]
    pub fn mu(&self, s: f64) -> f64 {
        self.growth.eval(s)
    }

    #[inline]
    pub fn mu_prime(&self, s: f64) -> f64 {
        self.growth.deriv(s)
    }

    /// Right-hand side of the substrate ODE with `ell` individuals held
    /// fixed. `ell = 0` is the post-extinction pure-inflow dynamics.
    #[inline]
    pub fn substrate_rhs(&self, ell: u64, s: f64) -> f64 {
        self.d * (self.s_in - s) - self.k * self.mu(s) * ell as f64
    }

    /// Upper bound `(mu(s_bar_1_or_s))` on the per-capita division rate valid
    /// along any flow segment started at substrate `s`.
    #[inline]
    pub fn division_rate_bound(&self, s: f64) -> f64 {
        self.mu(self.s_bar_1.max(s))
    }

    /// Admissible exponent upper limit `(mu(s_bar_1) - D)/(D + k mu'(s_bar_1))`,
    /// positive exactly when the survival hypothesis `mu(s_bar_1) > D` holds.
    pub fn p_max(&self) -> Option<f64> {
        let excess = self.mu(self.s_bar_1) - self.d;
        if excess > 0.0 {
            Some(excess / (self.d + self.k * self.mu_prime(self.s_bar_1)))
        } else {
            None
        }
    }
}

/// Evaluate `mu(s)`; rejects negative concentrations.
pub fn mu_eval(params: &ChemostatParams, s: f64) -> Result<f64> {
    if s < 0.0 || !s.is_finite() {
        return Err(Error::Domain(format!("mu is only defined for s >= 0, got {s}")));
    }
    Ok(params.mu(s))
}

/// Outcome of the sampled checks on the growth-rate assumptions and the
/// survival hypothesis. Failures are reported, never silently assumed away.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// `mu(0) = 0`.
    pub mu_zero_at_origin: bool,
    /// `mu` strictly increasing on a log-spaced grid of `[1e-9, 10 s_in]`.
    pub mu_strictly_increasing: bool,
    pub s_bar_1: f64,
    pub mu_at_s_bar_1: f64,
    /// Survival hypothesis `mu(s_bar_1) > D`.
    pub supercritical: bool,
    /// Admissible exponent interval `(0, p_max)`; `None` when empty.
    pub p_max: Option<f64>,
}

impl ValidationReport {
    /// All structural assumptions on `mu` hold.
    pub fn assumption_holds(&self) -> bool {
        self.mu_zero_at_origin && self.mu_strictly_increasing
    }
}

/// Sampled validation of the growth law and the survival hypothesis.
pub fn validate(params: &ChemostatParams) -> ValidationReport {
    let mu_zero_at_origin = params.mu(0.0) == 0.0;
    let lo: f64 = 1e-9;
    let hi = 10.0 * params.s_in();
    let n = 400;
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    let mut mu_strictly_increasing = params.mu(lo) > 0.0;
    let mut prev = params.mu(lo);
    let mut s = lo;
    for _ in 1..n {
        s *= ratio;
        let v = params.mu(s);
        if v <= prev {
            mu_strictly_increasing = false;
            break;
        }
        prev = v;
    }
    let s_bar_1 = params.s_bar_1();
    let mu_at_s_bar_1 = params.mu(s_bar_1);
    ValidationReport {
        mu_zero_at_origin,
        mu_strictly_increasing,
        s_bar_1,
        mu_at_s_bar_1,
        supercritical: mu_at_s_bar_1 > params.dilution(),
        p_max: params.p_max(),
    }
}

/// State of the coupled process: population count and substrate
/// concentration. `x = 0` marks the absorbing (extinct) component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub x: u64,
    pub s: f64,
}

impl HybridState {
    pub fn new(x: u64, s: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("substrate concentration must be finite and >= 0, got {s}")));
        }
        Ok(HybridState { x, s })
    }

    pub fn is_extinct(&self) -> bool {
        self.x == 0
    }
}

//! Lyapunov machinery for the killed semigroup: the weight functions
//! `psi`, `W` and `V`, the infinitesimal generator, parameter selection and
//! grid-based drift certificates.
//!
//! For `rho > 1`, an admissible exponent `p` and constants `alpha`, `theta`
//! the weights on `N* x (0, s_bar_1)` are
//!
//! ```text
//! psi(x, s) = x                      (extended by psi(0, s) = 0)
//! W(x, s)   = rho^x + 1/s + (s_bar_1 - s)^-p
//! V(x, s)   = rho^x e^{alpha s} / ln rho + 1/s
//!             + (1 + theta 1_{x <= 1}) (s_bar_1 - s)^-p
//! ```
//!
//! and the drift target is `L V <= -eta V + zeta psi` with `eta > D`. The
//! certificate checks the sign of `L V + eta V - zeta psi` on a grid with
//! geometric refinement towards the singular boundaries `s = 0` and
//! `s = s_bar_1`; the sign at the boundaries themselves is controlled
//! analytically by the construction of `eta`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ChemostatParams;

/// Constants of the Lyapunov pair `(psi, V)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LyapunovConfig {
    pub rho: f64,
    pub p: f64,
    pub alpha: f64,
    pub theta: f64,
    pub eta: f64,
    pub zeta: f64,
}

impl LyapunovConfig {
    /// Checks the structural constraints linking the constants to the model.
    pub fn validate(&self, params: &ChemostatParams) -> Result<()> {
        if !(self.rho > 1.0) {
            return Err(Error::Config(format!("rho must exceed 1, got {}", self.rho)));
        }
        let p_max = params.p_max().ok_or_else(|| {
            Error::Config("survival hypothesis mu(s_bar_1) > D fails; no admissible exponent".into())
        })?;
        if !(self.p > 0.0 && self.p < p_max) {
            return Err(Error::Config(format!("exponent p = {} outside the admissible interval (0, {p_max})", self.p)));
        }
        if self.alpha < (self.rho - 1.0) / params.yield_inverse() {
            return Err(Error::Config(format!(
                "alpha = {} below (rho - 1)/k = {}",
                self.alpha,
                (self.rho - 1.0) / params.yield_inverse()
            )));
        }
        let thr = theta_threshold(params, self.p)?;
        if !(self.theta > thr) {
            return Err(Error::Config(format!("theta = {} must exceed its threshold {thr}", self.theta)));
        }
        if !(self.eta > params.dilution()) {
            return Err(Error::Config(format!("eta = {} must exceed D = {}", self.eta, params.dilution())));
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::Config(format!("zeta must be >= 0, got {}", self.zeta)));
        }
        Ok(())
    }
}

/// Threshold that `theta` must strictly exceed for the exponent `p`.
fn theta_threshold(params: &ChemostatParams, p: f64) -> Result<f64> {
    let s1 = params.s_bar_1();
    let load = p * (params.dilution() + params.yield_inverse() * params.mu_prime(s1)) + params.dilution();
    let room = params.mu(s1) - load;
    if room <= 0.0 {
        return Err(Error::Config(format!("exponent p = {p} leaves no room for theta (mu(s_bar_1) - load = {room})")));
    }
    Ok(load / room)
}

/// `psi(x, s) = x`, extended by 0 on the absorbing component.
pub fn psi(x: u64, _s: f64) -> f64 {
    x as f64
}

fn check_open_domain(params: &ChemostatParams, x: u64, s: f64) -> Result<()> {
    if x == 0 {
        return Err(Error::Domain("weight functions are defined for x >= 1".into()));
    }
    if !(s > 0.0 && s < params.s_bar_1()) {
        return Err(Error::Domain(format!(
            "weight functions are defined for s in (0, {}), got {s}",
            params.s_bar_1()
        )));
    }
    Ok(())
}

/// `W(x, s) = rho^x + 1/s + (s_bar_1 - s)^-p` on `N* x (0, s_bar_1)`.
pub fn w(cfg: &LyapunovConfig, params: &ChemostatParams, x: u64, s: f64) -> Result<f64> {
    check_open_domain(params, x, s)?;
    Ok(cfg.rho.powi(x as i32) + 1.0 / s + (params.s_bar_1() - s).powf(-cfg.p))
}

fn v_inner(cfg: &LyapunovConfig, params: &ChemostatParams, x: u64, s: f64) -> f64 {
    let boost = if x <= 1 { 1.0 + cfg.theta } else { 1.0 };
    cfg.rho.powi(x as i32) * (cfg.alpha * s).exp() / cfg.rho.ln()
        + 1.0 / s
        + boost * (params.s_bar_1() - s).powf(-cfg.p)
}

fn v_inner_ds(cfg: &LyapunovConfig, params: &ChemostatParams, x: u64, s: f64) -> f64 {
    let boost = if x <= 1 { 1.0 + cfg.theta } else { 1.0 };
    cfg.alpha * cfg.rho.powi(x as i32) * (cfg.alpha * s).exp() / cfg.rho.ln() - 1.0 / (s * s)
        + boost * cfg.p * (params.s_bar_1() - s).powf(-cfg.p - 1.0)
}

/// `V(x, s)` on `N* x (0, s_bar_1)`.
pub fn v(cfg: &LyapunovConfig, params: &ChemostatParams, x: u64, s: f64) -> Result<f64> {
    check_open_domain(params, x, s)?;
    Ok(v_inner(cfg, params, x, s))
}

/// The two constants `(c_low, c_high)` with
/// `c_low W <= V <= c_high W` on `N* x (0, s_bar_1)`.
pub fn sandwich_constants(cfg: &LyapunovConfig, params: &ChemostatParams) -> (f64, f64) {
    let log_rho = cfg.rho.ln();
    let c_low = (1.0 / log_rho).min(1.0);
    let c_high = (1.0 + cfg.theta).max((cfg.alpha * params.s_bar_1()).exp() / log_rho);
    (c_low, c_high)
}

/// A function in the generator's domain: its value on the lattice and its
/// substrate derivative, both analytic. Finite differencing of user
/// functions is deliberately unsupported; drift margins near the boundary
/// are ill-conditioned under differencing.
pub trait DriftFunction {
    fn value(&self, x: u64, s: f64) -> f64;
    fn d_ds(&self, x: u64, s: f64) -> f64;
}

/// Generator of the coupled process applied to `f` at `(x, s)`:
/// transport along the substrate ODE plus division and washout jumps.
pub fn generator_apply(params: &ChemostatParams, f: &dyn DriftFunction, x: u64, s: f64) -> f64 {
    let drift = params.substrate_rhs(x, s) * f.d_ds(x, s);
    if x == 0 {
        return drift;
    }
    let xf = x as f64;
    let here = f.value(x, s);
    drift
        + params.mu(s) * xf * (f.value(x + 1, s) - here)
        + params.dilution() * xf * (f.value(x - 1, s) - here)
}

/// `psi` as a generator argument.
pub struct PsiFunction;

impl DriftFunction for PsiFunction {
    fn value(&self, x: u64, _s: f64) -> f64 {
        x as f64
    }
    fn d_ds(&self, _x: u64, _s: f64) -> f64 {
        0.0
    }
}

/// `V` as a generator argument, with its natural extension at `x = 0`
/// (used by the washout term from `x = 1`).
pub struct VFunction<'a> {
    pub cfg: &'a LyapunovConfig,
    pub params: &'a ChemostatParams,
}

impl DriftFunction for VFunction<'_> {
    fn value(&self, x: u64, s: f64) -> f64 {
        v_inner(self.cfg, self.params, x, s)
    }
    fn d_ds(&self, x: u64, s: f64) -> f64 {
        v_inner_ds(self.cfg, self.params, x, s)
    }
}

/// `W` as a generator argument (natural extension at `x = 0`).
pub struct WFunction<'a> {
    pub cfg: &'a LyapunovConfig,
    pub params: &'a ChemostatParams,
}

impl DriftFunction for WFunction<'_> {
    fn value(&self, x: u64, s: f64) -> f64 {
        self.cfg.rho.powi(x as i32) + 1.0 / s + (self.params.s_bar_1() - s).powf(-self.cfg.p)
    }
    fn d_ds(&self, _x: u64, s: f64) -> f64 {
        -1.0 / (s * s) + self.cfg.p * (self.params.s_bar_1() - s).powf(-self.cfg.p - 1.0)
    }
}

/// Grid on `[1, x_max] x [s_lo, s_hi]` with geometric refinement towards
/// both substrate boundaries (spacing halves as the boundary approaches).
#[derive(Debug, Clone, Serialize)]
pub struct DriftGrid {
    pub x_max: u64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub s_points: usize,
}

impl DriftGrid {
    /// Default grid: `x <= 50`, `s` spanning `(0, s_bar_1)` up to a relative
    /// margin of 1e-4, 2000 substrate points.
    pub fn default_for(params: &ChemostatParams) -> Self {
        let s1 = params.s_bar_1();
        DriftGrid { x_max: 50, s_lo: 1e-4 * s1, s_hi: (1.0 - 1e-4) * s1, s_points: 2000 }
    }

    pub fn s_values(&self) -> Vec<f64> {
        let n = self.s_points.max(8);
        let n_uniform = n / 2;
        let n_side = (n - n_uniform) / 2;
        let mid = 0.5 * (self.s_lo + self.s_hi);
        let mut out = Vec::with_capacity(n + 2);
        for i in 0..n_uniform {
            out.push(self.s_lo + (self.s_hi - self.s_lo) * i as f64 / (n_uniform - 1) as f64);
        }
        // geometric clustering: distance to the boundary halves every
        // handful of points, bottoming out at 1e-3 of the half-width
        let shrink = 1e-3f64.powf(1.0 / n_side as f64);
        let mut d_lo = mid - self.s_lo;
        let mut d_hi = self.s_hi - mid;
        for _ in 0..n_side {
            d_lo *= shrink;
            d_hi *= shrink;
            out.push(self.s_lo + d_lo);
            out.push(self.s_hi - d_hi);
        }
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        out
    }
}

/// Outcome of a grid drift check for `L V + eta V - zeta psi <= 0`.
#[derive(Debug, Clone, Serialize)]
pub struct DriftCertificate {
    pub config: LyapunovConfig,
    pub grid: DriftGrid,
    /// Largest value of `L V + eta V - zeta psi` over the grid.
    pub worst_margin: f64,
    pub worst_point: (u64, f64),
    /// Margin restricted to the boosted row `x = 1`, whose behaviour as
    /// `s -> s_bar_1` is what constrains `eta`; an inadmissible `eta`
    /// shows up here first.
    pub row1_margin: f64,
    pub row1_worst_s: f64,
    pub passed: bool,
}

impl DriftCertificate {
    /// Time-dependent constant `zeta_t = zeta e^{(mu(s_bar_1) - D) t}/(eta - D)`
    /// appearing in the integrated drift bound.
    pub fn zeta_t(&self, params: &ChemostatParams, t: f64) -> f64 {
        self.config.zeta * ((params.mu(params.s_bar_1()) - params.dilution()) * t).exp()
            / (self.config.eta - params.dilution())
    }
}

/// Largest value of `L V + eta V` over the grid; `max(0, .)` is the smallest
/// grid-certified `zeta` (since `psi >= 1` there).
pub fn fitted_zeta(params: &ChemostatParams, cfg: &LyapunovConfig, grid: &DriftGrid) -> f64 {
    let vf = VFunction { cfg, params };
    let mut worst = f64::NEG_INFINITY;
    for s in grid.s_values() {
        for x in 1..=grid.x_max {
            let lv = generator_apply(params, &vf, x, s);
            let val = lv + cfg.eta * vf.value(x, s);
            if val > worst {
                worst = val;
            }
        }
    }
    worst.max(0.0)
}

/// Evaluates the drift margin `L V + eta V - zeta psi` over the grid.
pub fn verify_drift(params: &ChemostatParams, cfg: &LyapunovConfig, grid: &DriftGrid) -> DriftCertificate {
    let vf = VFunction { cfg, params };
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = (1u64, grid.s_lo);
    let mut row1 = f64::NEG_INFINITY;
    let mut row1_s = grid.s_lo;
    for s in grid.s_values() {
        for x in 1..=grid.x_max {
            let lv = generator_apply(params, &vf, x, s);
            let margin = lv + cfg.eta * vf.value(x, s) - cfg.zeta * psi(x, s);
            if margin > worst {
                worst = margin;
                worst_point = (x, s);
            }
            if x == 1 && margin > row1 {
                row1 = margin;
                row1_s = s;
            }
        }
    }
    DriftCertificate {
        config: *cfg,
        grid: DriftGrid { x_max: grid.x_max, s_lo: grid.s_lo, s_hi: grid.s_hi, s_points: grid.s_points },
        worst_margin: worst,
        worst_point,
        row1_margin: row1,
        row1_worst_s: row1_s,
        passed: worst <= 0.0,
    }
}

/// Builds a full Lyapunov configuration from `(rho, p)`:
/// `alpha` at its minimum `(rho - 1)/k`, `theta` 10% above its threshold,
/// `eta` halfway between `D` and the boundary drift limit, and `zeta`
/// fitted as the smallest grid-certified constant.
pub fn select_parameters(params: &ChemostatParams, rho: f64, p: f64) -> Result<LyapunovConfig> {
    if !(rho > 1.0) {
        return Err(Error::Config(format!("rho must exceed 1, got {rho}")));
    }
    let p_max = params
        .p_max()
        .ok_or_else(|| Error::Config("survival hypothesis mu(s_bar_1) > D fails; no admissible exponent".into()))?;
    if !(p > 0.0 && p < p_max) {
        return Err(Error::Config(format!("exponent p = {p} outside the admissible interval (0, {p_max})")));
    }
    let alpha = (rho - 1.0) / params.yield_inverse();
    let theta = 1.1 * theta_threshold(params, p)?;
    let s1 = params.s_bar_1();
    let d = params.dilution();
    // Boundary limit of -L V_2(1, s)/V_2(1, s) as s -> s_bar_1; eta may sit
    // anywhere strictly between D and this limit.
    let limit = theta * params.mu(s1) / (1.0 + theta) - p * (d + params.yield_inverse() * params.mu_prime(s1));
    let eta = d + 0.5 * (limit - d);
    if !(eta > d) {
        return Err(Error::Config(format!("selected eta = {eta} does not exceed D = {d}")));
    }
    let mut cfg = LyapunovConfig { rho, p, alpha, theta, eta, zeta: 0.0 };
    cfg.zeta = fitted_zeta(params, &cfg, &DriftGrid::default_for(params));
    cfg.validate(params)?;
    Ok(cfg)
}

/// Constants of the exponential-moment weight
/// `g(x, s) = (1_{x>=2} + (1+delta1) 1_{x=1} + delta0 1_{x=0}) e^{beta s}`
/// on the outer region `s >= s_bar_1 - eps`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GConstants {
    pub eps: f64,
    pub beta: f64,
    pub delta0: f64,
    pub delta1: f64,
    /// Drift bound for rows `x >= 2` (negative when admissible).
    pub c1: f64,
    /// Drift bound for the row `x = 1` (negative when admissible).
    pub c2: f64,
    /// Decay rate `C = -(max(c1, c2))`.
    pub c_rate: f64,
    /// Prefactor of the exponential-moment bound `A e^{beta s}`.
    pub a_const: f64,
}

/// `g` as a generator argument.
pub struct GFunction {
    pub beta: f64,
    pub delta0: f64,
    pub delta1: f64,
}

impl GFunction {
    fn level(&self, x: u64) -> f64 {
        match x {
            0 => self.delta0,
            1 => 1.0 + self.delta1,
            _ => 1.0,
        }
    }
}

impl DriftFunction for GFunction {
    fn value(&self, x: u64, s: f64) -> f64 {
        self.level(x) * (self.beta * s).exp()
    }
    fn d_ds(&self, x: u64, s: f64) -> f64 {
        self.beta * self.level(x) * (self.beta * s).exp()
    }
}

/// Certificate for `L g <= -(C + D) g` on `N* x [s_bar_1 - eps, 3 s_in]`.
#[derive(Debug, Clone, Serialize)]
pub struct GCertificate {
    pub constants: GConstants,
    pub x_max: u64,
    pub s_points: usize,
    /// Largest relative margin `L g / g + C + D` over the grid.
    pub worst_margin_rel: f64,
    pub worst_point: (u64, f64),
    pub passed: bool,
}

fn g_row_bounds(params: &ChemostatParams, eps: f64, beta: f64, delta0: f64, delta1: f64) -> (f64, f64) {
    let d = params.dilution();
    let edge = params.s_bar_1() - eps;
    // Row x = 2 dominates every x >= 2; the washout term contributes
    // 2 D delta1.
    let c1 = (d * (params.s_in() - edge) - 2.0 * params.yield_inverse() * params.mu(edge)) * beta + d * (1.0 + 2.0 * delta1);
    let c2 = (d * (params.s_in() - edge) - params.yield_inverse() * params.mu(edge)) * beta
        - params.mu(edge) * delta1 / (1.0 + delta1)
        + d * delta0 / (1.0 + delta1);
    (c1, c2)
}

/// Verifies the exponential-moment drift `L g <= -(C + D) g` on a grid of
/// the outer region, with `C = -(max(C1, C2))` from the row bounds.
pub fn g_drift_check(
    params: &ChemostatParams,
    eps: f64,
    beta: f64,
    delta0: f64,
    delta1: f64,
) -> Result<(f64, GCertificate)> {
    let s1 = params.s_bar_1();
    let s2 = crate::flow::equilibrium(params, 2, &crate::flow::FlowSolverConfig::default())?;
    if !(eps > 0.0 && eps < s1 - s2) {
        return Err(Error::Config(format!(
            "eps must lie in (0, s_bar_1 - s_bar_2) = (0, {}), got {eps}",
            s1 - s2
        )));
    }
    for (name, v) in [("beta", beta), ("delta0", delta0), ("delta1", delta1)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let (c1, c2) = g_row_bounds(params, eps, beta, delta0, delta1);
    let c_rate = -(c1.max(c2));
    if !(c_rate > 0.0) {
        return Err(Error::Config(format!(
            "constants give no positive decay rate: C1 = {c1}, C2 = {c2}; shrink eps/delta0 or raise beta"
        )));
    }
    let constants = GConstants {
        eps,
        beta,
        delta0,
        delta1,
        c1,
        c2,
        c_rate,
        a_const: (1.0 + delta1) / delta0.min(1.0),
    };
    let g = GFunction { beta, delta0, delta1 };
    let x_max = 50u64;
    let s_points = 400usize;
    let lo = s1 - eps;
    let hi = 3.0 * params.s_in();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = (1u64, lo);
    for i in 0..s_points {
        let s = lo + (hi - lo) * i as f64 / (s_points - 1) as f64;
        for x in 1..=x_max {
            let rel = generator_apply(params, &g, x, s) / g.value(x, s) + c_rate + params.dilution();
            if rel > worst {
                worst = rel;
                worst_point = (x, s);
            }
        }
    }
    let cert = GCertificate {
        constants,
        x_max,
        s_points,
        worst_margin_rel: worst,
        worst_point,
        passed: worst <= 1e-9,
    };
    Ok((c_rate, cert))
}

/// Scans for admissible exponential-moment constants following the
/// construction order: fix `delta1`, pick `beta` against the `x >= 2` row,
/// then shrink `eps` and `delta0` until the `x = 1` row is negative.
pub fn scan_g_constants(params: &ChemostatParams) -> Result<GConstants> {
    let s1 = params.s_bar_1();
    let s2 = crate::flow::equilibrium(params, 2, &crate::flow::FlowSolverConfig::default())?;
    let delta1 = 1.0;
    let eps_bar = 0.5 * (s1 - s2);
    let d = params.dilution();
    let edge = s1 - eps_bar;
    let decay_margin = 2.0 * params.yield_inverse() * params.mu(edge) - d * (params.s_in() - edge);
    if !(decay_margin > 0.0) {
        return Err(Error::Config(format!(
            "no admissible beta: two-individual drift at s = {edge} is not contracting (margin {decay_margin})"
        )));
    }
    let beta = 2.0 * d * (1.0 + 2.0 * delta1) / decay_margin;
    let delta0 = (params.mu(s1) / (4.0 * d)).min(1.0);
    let mut eps = eps_bar;
    let mut tried = Vec::new();
    for _ in 0..60 {
        let (c1, c2) = g_row_bounds(params, eps, beta, delta0, delta1);
        if c1 < 0.0 && c2 < 0.0 {
            return Ok(GConstants {
                eps,
                beta,
                delta0,
                delta1,
                c1,
                c2,
                c_rate: -(c1.max(c2)),
                a_const: (1.0 + delta1) / delta0.min(1.0),
            });
        }
        tried.push(format!("eps = {eps}: C1 = {c1}, C2 = {c2}"));
        eps *= 0.5;
    }
    Err(Error::Config(format!(
        "no admissible (beta, eps) found; scan report:\n{}",
        tried.join("\n")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GrowthLaw;

    fn linear() -> ChemostatParams {
        ChemostatParams::new(1.0, 2.0, 1.0, GrowthLaw::Linear { c: 3.0 }).unwrap()
    }

    fn monod() -> ChemostatParams {
        ChemostatParams::new(1.0, 2.0, 1.0, GrowthLaw::Monod { m: 5.0, half_saturation: 1.0 }).unwrap()
    }

    fn sample_cfg(params: &ChemostatParams) -> LyapunovConfig {
        select_parameters(params, 2.0, 0.1).unwrap()
    }

    #[test]
    fn psi_is_population_count_with_extension() {
        assert_eq!(psi(3, 0.123), 3.0);
        assert_eq!(psi(0, 0.3), 0.0);
    }

    #[test]
    fn w_matches_hand_value() {
        let p = linear();
        let cfg = LyapunovConfig { rho: 2.0, p: 0.1, alpha: 1.0, theta: 15.4, eta: 1.1, zeta: 1.0 };
        let val = w(&cfg, &p, 1, 0.25).unwrap();
        let oracle = 2.0 + 4.0 + 0.25f64.powf(-0.1);
        assert!((val - oracle).abs() < 1e-12);
        assert!((oracle - 7.148698).abs() < 1e-6);
    }

    #[test]
    fn weights_reject_out_of_domain_points() {
        let p = linear();
        let cfg = sample_cfg(&p);
        assert!(w(&cfg, &p, 0, 0.25).is_err());
        assert!(w(&cfg, &p, 1, 0.75).is_err());
        assert!(v(&cfg, &p, 1, 0.0).is_err());
    }

    #[test]
    fn sandwich_constants_examples() {
        let p = linear();
        // rho = e, theta = 1, alpha such that alpha * s_bar_1 = 0 is not
        // representable with alpha > 0; approximate with tiny alpha.
        let cfg1 = LyapunovConfig {
            rho: std::f64::consts::E,
            p: 0.1,
            alpha: 1e-12,
            theta: 1.0,
            eta: 1.1,
            zeta: 0.0,
        };
        let (lo, _) = sandwich_constants(&cfg1, &p);
        assert!((lo - 1.0).abs() < 1e-12);
        let cfg2 = LyapunovConfig { rho: 2.0, p: 0.1, alpha: 1.0, theta: 3.0, eta: 1.1, zeta: 0.0 };
        let (_, hi) = sandwich_constants(&cfg2, &p);
        assert!((hi - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sandwich_inequality_on_grid() {
        for params in [linear(), monod()] {
            let cfg = sample_cfg(&params);
            let (c_lo, c_hi) = sandwich_constants(&cfg, &params);
            let s1 = params.s_bar_1();
            for x in 1..=10u64 {
                for i in 1..50 {
                    let s = s1 * i as f64 / 50.0;
                    let wv = w(&cfg, &params, x, s).unwrap();
                    let vv = v(&cfg, &params, x, s).unwrap();
                    assert!(c_lo * wv <= vv * (1.0 + 1e-12), "lower sandwich at ({x}, {s})");
                    assert!(vv <= c_hi * wv * (1.0 + 1e-12), "upper sandwich at ({x}, {s})");
                    assert!(1.0 <= psi(x, s) && psi(x, s) <= vv, "1 <= psi <= V at ({x}, {s})");
                }
            }
        }
    }

    #[test]
    fn generator_on_psi_matches_growth_minus_dilution() {
        let p = linear();
        let lpsi = generator_apply(&p, &PsiFunction, 2, 0.5);
        assert!((lpsi - 1.0).abs() < 1e-12);
        // generator kills constants
        struct One;
        impl DriftFunction for One {
            fn value(&self, _x: u64, _s: f64) -> f64 {
                1.0
            }
            fn d_ds(&self, _x: u64, _s: f64) -> f64 {
                0.0
            }
        }
        assert_eq!(generator_apply(&p, &One, 3, 0.2), 0.0);
    }

    #[test]
    fn generator_psi_pointwise_bounds() {
        for params in [linear(), monod()] {
            let d = params.dilution();
            let mu1 = params.mu(params.s_bar_1());
            for x in 1..=20u64 {
                for i in 1..100 {
                    let s = params.s_bar_1() * i as f64 / 100.0;
                    let lpsi = generator_apply(&params, &PsiFunction, x, s);
                    let psi_v = psi(x, s);
                    assert!(lpsi >= -d * psi_v - 1e-12);
                    assert!(lpsi <= (mu1 - d) * psi_v + 1e-12);
                }
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        for params in [linear(), monod()] {
            let cfg = sample_cfg(&params);
            let s1 = params.s_bar_1();
            let vf = VFunction { cfg: &cfg, params: &params };
            let wf = WFunction { cfg: &cfg, params: &params };
            let gf = GFunction { beta: 2.0, delta0: 0.3, delta1: 1.0 };
            for x in [0u64, 1, 2, 7] {
                for i in 2..=97 {
                    let s = s1 * i as f64 / 100.0;
                    let h = 1e-7 * s1;
                    for (name, f) in [("V", &vf as &dyn DriftFunction), ("W", &wf), ("g", &gf)] {
                        let fd = (f.value(x, s + h) - f.value(x, s - h)) / (2.0 * h);
                        let an = f.d_ds(x, s);
                        assert!(
                            (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                            "{name} derivative at ({x}, {s}): fd {fd} vs {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn select_parameters_linear_example() {
        let p = linear();
        let cfg = select_parameters(&p, 2.0, 0.1).unwrap();
        assert!((cfg.alpha - 1.0).abs() < 1e-12);
        // threshold = (0.1 * 4 + 1)/(1.5 - 1.4) = 14, times 1.1
        assert!((cfg.theta - 15.4).abs() < 1e-9);
        assert!(cfg.eta > p.dilution());
        cfg.validate(&p).unwrap();
    }

    #[test]
    fn select_parameters_rejects_bad_exponent() {
        let p = linear();
        assert!(select_parameters(&p, 2.0, 0.2).is_err()); // p_max = 0.125
        let critical = ChemostatParams::new(1.0, 2.0, 1.0, GrowthLaw::Linear { c: 1.0 }).unwrap();
        assert!(select_parameters(&critical, 2.0, 0.05).is_err());
    }

    #[test]
    fn lv_matches_displayed_decomposition() {
        // Independent evaluation of the three displayed parts of L V.
        for params in [linear(), monod()] {
            let cfg = sample_cfg(&params);
            let s1 = params.s_bar_1();
            let d = params.dilution();
            let k = params.yield_inverse();
            let vf = VFunction { cfg: &cfg, params: &params };
            for x in 1..=6u64 {
                for i in 1..40 {
                    let s = s1 * i as f64 / 40.0;
                    let xf = x as f64;
                    let mu = params.mu(s);
                    let drift = d * (params.s_in() - s) - k * mu * xf;
                    let v0 = cfg.rho.powi(x as i32) * (cfg.alpha * s).exp() / cfg.rho.ln();
                    let v1 = 1.0 / s;
                    let boost = if x <= 1 { 1.0 + cfg.theta } else { 1.0 };
                    let v2 = boost * (s1 - s).powf(-cfg.p);
                    let lv0 = (drift * cfg.alpha + (cfg.rho - 1.0) * (mu - d / cfg.rho) * xf) * v0;
                    let lv1 = -drift / s * v1;
                    let ind1 = if x == 1 { 1.0 } else { 0.0 };
                    let ind2 = if x == 2 { 1.0 } else { 0.0 };
                    let lv2 = (cfg.p * drift / (s1 - s) - mu * ind1 * cfg.theta / (1.0 + cfg.theta)
                        + 2.0 * d * cfg.theta * ind2)
                        * v2;
                    let direct = generator_apply(&params, &vf, x, s);
                    let displayed = lv0 + lv1 + lv2;
                    assert!(
                        (direct - displayed).abs() <= 1e-9 * displayed.abs().max(1.0),
                        "decomposition at ({x}, {s}): {direct} vs {displayed}"
                    );
                }
            }
        }
    }

    #[test]
    fn drift_certificate_passes_for_selected_parameters() {
        for params in [linear(), monod()] {
            let cfg = select_parameters(&params, 2.0, 0.05).unwrap();
            let cert = verify_drift(&params, &cfg, &DriftGrid::default_for(&params));
            assert!(cert.passed, "worst margin {} at {:?}", cert.worst_margin, cert.worst_point);
        }
    }

    #[test]
    fn huge_zeta_always_passes() {
        let params = linear();
        let mut cfg = sample_cfg(&params);
        cfg.zeta *= 50.0;
        let cert = verify_drift(&params, &cfg, &DriftGrid::default_for(&params));
        assert!(cert.passed);
    }

    #[test]
    fn broken_eta_fails_near_upper_boundary_at_x1() {
        let params = linear();
        let mut cfg = sample_cfg(&params);
        cfg.eta = 10.0 * params.mu(params.s_bar_1());
        let cert = verify_drift(&params, &cfg, &DriftGrid::default_for(&params));
        assert!(!cert.passed);
        // The boundary limit constraining eta is exceeded: the boosted row
        // x = 1 violates the margin, worst near s_bar_1.
        assert!(cert.row1_margin > 0.0);
        assert!(
            cert.row1_worst_s > 0.9 * params.s_bar_1(),
            "offending point near the upper boundary, got s = {}",
            cert.row1_worst_s
        );
    }

    #[test]
    fn g_constants_scan_and_certificate() {
        for params in [linear(), monod()] {
            let gc = scan_g_constants(&params).unwrap();
            assert!(gc.c_rate > 0.0);
            let (c, cert) = g_drift_check(&params, gc.eps, gc.beta, gc.delta0, gc.delta1).unwrap();
            assert!((c - gc.c_rate).abs() < 1e-12);
            assert!(cert.passed, "worst relative margin {}", cert.worst_margin_rel);
            // g >= min(1, delta0) by construction
            let g = GFunction { beta: gc.beta, delta0: gc.delta0, delta1: gc.delta1 };
            for x in 0..5u64 {
                assert!(g.value(x, 0.0) >= gc.delta0.min(1.0));
            }
        }
    }

    #[test]
    fn g_drift_check_rejects_inadmissible_constants() {
        let params = linear();
        let gc = scan_g_constants(&params).unwrap();
        // beta far too small: the x >= 2 row loses its negativity
        assert!(g_drift_check(&params, gc.eps, 1e-6, gc.delta0, gc.delta1).is_err());
    }
}

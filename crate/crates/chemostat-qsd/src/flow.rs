//! Deterministic substrate dynamics between jumps: the forward flow
//! `phi(ell, s0, t)`, its equilibria `s_bar_ell`, the time-inverse
//! (time needed to travel from `s0` to `s` at fixed population) and the
//! initial-condition inverse (where to start so that the flow lands on `s`
//! after time `t`).
//!
//! With `ell` individuals held fixed the substrate solves
//! `s' = D (s_in - s) - k mu(s) ell`, which relaxes monotonically towards
//! the unique equilibrium `s_bar_ell`; equilibria decrease strictly in
//! `ell` and are never crossed, which is what makes the two inverse maps
//! well defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChemostatParams;
use crate::numeric::{self, OdeTol};

/// Numerical knobs for the flow solver and the inverse-map root finding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSolverConfig {
    /// Absolute tolerance of the ODE integrator.
    pub abs_tol: f64,
    /// Relative tolerance of the ODE integrator.
    pub rel_tol: f64,
    /// Largest step the integrator may take.
    pub max_step: f64,
    /// Residual tolerance for root finding (equilibria, inverse maps).
    pub root_tol: f64,
}

impl Default for FlowSolverConfig {
    fn default() -> Self {
        // Chosen so composed operations (round trips through the inverse
        // maps) hold at 1e-8.
        FlowSolverConfig { abs_tol: 1e-10, rel_tol: 1e-10, max_step: 10.0, root_tol: 1e-11 }
    }
}

impl FlowSolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("max_step", self.max_step),
            ("root_tol", self.root_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("solver tolerance `{name}` must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn ode_tol(&self) -> OdeTol {
        OdeTol { abs: self.abs_tol, rel: self.rel_tol, max_step: self.max_step }
    }

    /// Targets closer than this to an equilibrium are reported as
    /// unreachable rather than mapped to a huge finite time.
    pub fn near_equilibrium_band(&self) -> f64 {
        1e3 * self.root_tol
    }
}

/// Substrate equilibrium `s_bar_ell` with `ell >= 1` individuals: the unique
/// root of `D (s_in - s) = k mu(s) ell` in `(0, s_in)`.
pub fn equilibrium(params: &ChemostatParams, ell: u64, cfg: &FlowSolverConfig) -> Result<f64> {
    if ell == 0 {
        return Err(Error::Precondition("equilibrium requires ell >= 1".into()));
    }
    let root = numeric::bisect(|s| params.substrate_rhs(ell, s), 0.0, params.s_in())?;
    let residual = params.substrate_rhs(ell, root).abs();
    if residual > cfg.root_tol {
        return Err(Error::Numeric(format!(
            "equilibrium residual {residual} exceeds tolerance {} for ell = {ell}",
            cfg.root_tol
        )));
    }
    Ok(root)
}

/// Table of equilibria `s_bar_1 > s_bar_2 > ... > s_bar_L`.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumTable {
    values: Vec<f64>,
}

impl EquilibriumTable {
    pub fn new(params: &ChemostatParams, l_max: u64, cfg: &FlowSolverConfig) -> Result<Self> {
        if l_max == 0 {
            return Err(Error::Precondition("equilibrium table needs l_max >= 1".into()));
        }
        let mut values = Vec::with_capacity(l_max as usize);
        for ell in 1..=l_max {
            let v = equilibrium(params, ell, cfg)?;
            if let Some(&prev) = values.last() {
                if v >= prev {
                    return Err(Error::Invariant(format!(
                        "equilibria must decrease strictly: s_bar_{} = {prev} vs s_bar_{ell} = {v}",
                        ell - 1
                    )));
                }
            }
            values.push(v);
        }
        Ok(EquilibriumTable { values })
    }

    pub fn get(&self, ell: u64) -> Option<f64> {
        (ell >= 1).then(|| self.values.get(ell as usize - 1).copied()).flatten()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest `ell` with `s_bar_ell < s`, if within the table.
    pub fn first_below(&self, s: f64) -> Option<u64> {
        self.values.iter().position(|&v| v < s).map(|i| i as u64 + 1)
    }
}

/// Forward flow `phi(ell, s0, t)`. `ell = 0` is accepted and gives the
/// post-extinction dynamics relaxing to `s_in`.
pub fn flow(params: &ChemostatParams, ell: u64, s0: f64, t: f64, cfg: &FlowSolverConfig) -> Result<f64> {
    if !(s0 >= 0.0 && s0.is_finite()) {
        return Err(Error::Domain(format!("flow requires s0 >= 0, got {s0}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("flow requires t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(s0);
    }
    let y = numeric::integrate(&|_t, y: &[f64; 1]| [params.substrate_rhs(ell, y[0])], 0.0, [s0], t, &cfg.ode_tol())?;
    Ok(y[0])
}

/// Result of the time-inverse map: time for the substrate to travel from
/// `s0` to `s` with a fixed population, or unreachable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TimeToReach {
    Finite(f64),
    /// Target outside the orbit `[s0, s_bar_ell)` (resp. `(s_bar_ell, s0]`).
    /// `near_equilibrium` marks targets inside the orbit but so close to the
    /// equilibrium that the travel time blows up.
    Unreachable { near_equilibrium: bool },
}

impl TimeToReach {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            TimeToReach::Finite(t) => Some(t),
            TimeToReach::Unreachable { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, TimeToReach::Finite(_))
    }
}

/// Time-inverse of the flow: the `t` with `phi(ell, s0, t) = s`, `+inf`
/// (as [`TimeToReach::Unreachable`]) when `s` is not on the orbit of `s0`.
pub fn time_to_reach(params: &ChemostatParams, ell: u64, s0: f64, s: f64, cfg: &FlowSolverConfig) -> Result<TimeToReach> {
    if ell == 0 {
        return Err(Error::Precondition("time_to_reach requires ell >= 1".into()));
    }
    for (name, v) in [("s0", s0), ("s", s)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("time_to_reach requires {name} >= 0, got {v}")));
        }
    }
    if s == s0 {
        return Ok(TimeToReach::Finite(0.0));
    }
    let s_bar = equilibrium(params, ell, cfg)?;
    // Orbit of s0 is the half-open interval from s0 towards s_bar.
    let reachable = if s0 < s_bar { s > s0 && s < s_bar } else { s < s0 && s > s_bar };
    if !reachable {
        return Ok(TimeToReach::Unreachable { near_equilibrium: false });
    }
    if (s - s_bar).abs() < cfg.near_equilibrium_band() {
        return Ok(TimeToReach::Unreachable { near_equilibrium: true });
    }

    // Geometric bracket growth ensures the target is passed, then bisection
    // on the (monotone) flow pins the crossing time.
    let speed_cap = (params.dilution() * params.s_in()).max(params.yield_inverse() * params.mu(params.s_bar_1()) * ell as f64);
    let mut hi = ((s - s0).abs() / speed_cap).max(1e6 * f64::EPSILON);
    let mut lo = 0.0;
    let toward = if s0 < s_bar { 1.0 } else { -1.0 };
    for _ in 0..200 {
        let reached = toward * (flow(params, ell, s0, hi, cfg)? - s);
        if reached >= 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    let t = {
        let g = |t: f64| -> f64 {
            let v = flow(params, ell, s0, t, cfg).unwrap_or(f64::NAN);
            toward * (v - s)
        };
        numeric::bisect(g, lo, hi)?
    };
    let residual = (flow(params, ell, s0, t, cfg)? - s).abs();
    if residual > cfg.root_tol {
        return Err(Error::Numeric(format!(
            "time_to_reach residual {residual} exceeds {} (ell = {ell}, s0 = {s0}, s = {s})",
            cfg.root_tol
        )));
    }
    Ok(TimeToReach::Finite(t))
}

/// Initial-condition inverse of the flow: the `v` with `phi(ell, v, t) = s`,
/// clamped to `0` when `s` lies below the orbit of `0`.
pub fn initial_for(params: &ChemostatParams, ell: u64, s: f64, t: f64, cfg: &FlowSolverConfig) -> Result<f64> {
    if ell == 0 {
        return Err(Error::Precondition("initial_for requires ell >= 1".into()));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("initial_for requires s >= 0, got {s}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("initial_for requires t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(s);
    }
    let from_zero = flow(params, ell, 0.0, t, cfg)?;
    if s <= from_zero {
        // Concentrations at or below the orbit of 0 clamp to 0.
        return Ok(0.0);
    }
    let s_bar = equilibrium(params, ell, cfg)?;
    if s != s_bar && (s - s_bar).abs() < cfg.near_equilibrium_band() {
        // The preimage of a target this close to the equilibrium is
        // exponentially far away and cannot be resolved to root_tol.
        return Err(Error::Numeric(format!(
            "initial_for target {s} lies within the near-equilibrium band of s_bar_{ell} = {s_bar}; \
             the inversion is below solver resolution"
        )));
    }
    let (lo, hi) = if s <= s_bar {
        (0.0, s)
    } else {
        // Starting above the equilibrium the flow decreases, so the preimage
        // lies above s; grow the bracket until the flow overshoots.
        let mut hi = (2.0 * s).max(s + 1.0);
        for _ in 0..200 {
            if flow(params, ell, hi, t, cfg)? >= s {
                break;
            }
            hi *= 2.0;
        }
        (s, hi)
    };
    let root = numeric::bisect(
        |v| flow(params, ell, v, t, cfg).map(|r| r - s).unwrap_or(f64::NAN),
        lo,
        hi,
    )?;
    let residual = (flow(params, ell, root, t, cfg)? - s).abs();
    if residual > cfg.root_tol {
        return Err(Error::Numeric(format!(
            "initial_for residual {residual} exceeds {} (ell = {ell}, s = {s}, t = {t})",
            cfg.root_tol
        )));
    }
    Ok(root)
}

/// Checks the additivity of travel times along a monotone orbit:
/// going `s0 -> s2` takes the same time as `s0 -> s1` plus `s1 -> s2`.
pub fn phit_additivity_check(
    params: &ChemostatParams,
    ell: u64,
    s0: f64,
    s1: f64,
    s2: f64,
    cfg: &FlowSolverConfig,
) -> Result<bool> {
    let s_bar = equilibrium(params, ell, cfg)?;
    let above = s0 >= s1 && s1 >= s2 && s2 > s_bar;
    let below = s0 <= s1 && s1 <= s2 && s2 < s_bar;
    if !(above || below) {
        return Err(Error::Precondition(format!(
            "additivity requires s0, s1, s2 monotone on one side of s_bar_{ell} = {s_bar}, got ({s0}, {s1}, {s2})"
        )));
    }
    let t02 = time_to_reach(params, ell, s0, s2, cfg)?;
    let t01 = time_to_reach(params, ell, s0, s1, cfg)?;
    let t12 = time_to_reach(params, ell, s1, s2, cfg)?;
    match (t02, t01, t12) {
        (TimeToReach::Finite(a), TimeToReach::Finite(b), TimeToReach::Finite(c)) => {
            Ok((a - b - c).abs() <= 10.0 * cfg.root_tol)
        }
        // Near-equilibrium targets are excluded by the hypothesis s2 strictly
        // inside the orbit, but surface them rather than panic.
        _ => Err(Error::Numeric("additivity check hit an unreachable leg".into())),
    }
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

    fn cfg() -> FlowSolverConfig {
        FlowSolverConfig::default()
    }

    /// Linear-law closed form: s_bar + (s0 - s_bar) e^{-(D + k c ell) t}.
    fn linear_flow_oracle(p: &ChemostatParams, ell: u64, s0: f64, t: f64) -> f64 {
        let c = 3.0;
        let rate = p.dilution() + p.yield_inverse() * c * ell as f64;
        let s_bar = p.dilution() * p.s_in() / rate;
        s_bar + (s0 - s_bar) * (-rate * t).exp()
    }

    #[test]
    fn equilibrium_linear_closed_form() {
        let p = linear();
        assert!((equilibrium(&p, 1, &cfg()).unwrap() - 0.5).abs() < 1e-12);
        assert!((equilibrium(&p, 2, &cfg()).unwrap() - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_monod_quadratic_root() {
        let p = monod();
        let oracle = 6.0f64.sqrt() - 2.0;
        assert!((equilibrium(&p, 1, &cfg()).unwrap() - oracle).abs() < 1e-11);
    }

    #[test]
    fn equilibrium_table_decreases_to_zero() {
        let p = linear();
        let table = EquilibriumTable::new(&p, 50, &cfg()).unwrap();
        for ell in 1..=50u64 {
            let closed = 2.0 / (1.0 + 3.0 * ell as f64);
            assert!((table.get(ell).unwrap() - closed).abs() < 1e-10);
        }
        assert!(table.get(50).unwrap() < 0.014);
        assert_eq!(table.first_below(0.1), Some(7)); // 2/(1+3*7) = 1/11 < 0.1
    }

    #[test]
    fn flow_identity_and_fixed_point() {
        let p = linear();
        assert_eq!(flow(&p, 1, 0.37, 0.0, &cfg()).unwrap(), 0.37);
        let at_eq = flow(&p, 1, 0.5, 3.7, &cfg()).unwrap();
        assert!((at_eq - 0.5).abs() < 1e-9);
    }

    #[test]
    fn flow_matches_linear_closed_form() {
        let p = linear();
        let v = flow(&p, 1, 0.25, 0.25, &cfg()).unwrap();
        let oracle = 0.5 - 0.25 * (-1.0f64).exp();
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
        for (ell, s0, t) in [(1u64, 0.1, 0.8), (2, 0.45, 1.3), (3, 1.7, 0.2), (5, 0.0, 2.5)] {
            let v = flow(&p, ell, s0, t, &cfg()).unwrap();
            let o = linear_flow_oracle(&p, ell, s0, t);
            assert!((v - o).abs() < 1e-8, "ell {ell} s0 {s0} t {t}: {v} vs {o}");
        }
    }

    #[test]
    fn flow_after_extinction_relaxes_to_s_in() {
        let p = linear();
        let v = flow(&p, 0, 0.3, 40.0, &cfg()).unwrap();
        assert!((v - p.s_in()).abs() < 1e-8);
    }

    #[test]
    fn time_to_reach_linear_closed_form() {
        let p = linear();
        let t = time_to_reach(&p, 1, 0.25, 0.375, &cfg()).unwrap().finite().unwrap();
        assert!((t - 2.0f64.ln() / 4.0).abs() < 1e-9);
    }

    #[test]
    fn time_to_reach_identity_and_unreachable() {
        let p = linear();
        assert_eq!(time_to_reach(&p, 1, 0.25, 0.25, &cfg()).unwrap(), TimeToReach::Finite(0.0));
        // 0.6 is above the equilibrium 0.5, not on the orbit of 0.25.
        assert_eq!(
            time_to_reach(&p, 1, 0.25, 0.6, &cfg()).unwrap(),
            TimeToReach::Unreachable { near_equilibrium: false }
        );
        // Backwards along the orbit.
        assert_eq!(
            time_to_reach(&p, 1, 0.25, 0.1, &cfg()).unwrap(),
            TimeToReach::Unreachable { near_equilibrium: false }
        );
    }

    #[test]
    fn time_to_reach_flags_near_equilibrium_targets() {
        let p = linear();
        let s_bar = 0.5;
        let target = s_bar - 0.5 * cfg().near_equilibrium_band();
        assert_eq!(
            time_to_reach(&p, 1, 0.25, target, &cfg()).unwrap(),
            TimeToReach::Unreachable { near_equilibrium: true }
        );
    }

    #[test]
    fn initial_for_round_trip_and_clamp() {
        let p = linear();
        let c = cfg();
        let s = flow(&p, 1, 0.25, 0.25, &c).unwrap();
        let s0 = initial_for(&p, 1, s, 0.25, &c).unwrap();
        assert!((s0 - 0.25).abs() < 1e-8);
        // Below the orbit of zero: clamped.
        let floor = flow(&p, 1, 0.0, 0.3, &c).unwrap();
        assert_eq!(initial_for(&p, 1, 0.5 * floor, 0.3, &c).unwrap(), 0.0);
    }

    #[test]
    fn initial_for_monod_round_trip_above_equilibrium() {
        let p = monod();
        let c = cfg();
        for (ell, s0, t) in [(1u64, 0.3, 0.4), (2, 1.4, 0.7), (4, 0.05, 0.3)] {
            let s = flow(&p, ell, s0, t, &c).unwrap();
            let back = initial_for(&p, ell, s, t, &c).unwrap();
            assert!((back - s0).abs() < 1e-8, "ell {ell} s0 {s0} t {t} -> {back}");
        }
    }

    #[test]
    fn initial_for_persistence_in_time() {
        // Positivity at horizon t implies positivity at any earlier horizon.
        let p = monod();
        let c = cfg();
        for s in [0.05, 0.2, 0.44] {
            for t in [0.1, 0.5, 1.5] {
                if initial_for(&p, 2, s, t, &c).unwrap() > 0.0 {
                    for frac in [0.8, 0.5, 0.1] {
                        assert!(initial_for(&p, 2, s, frac * t, &c).unwrap() > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn additivity_holds_on_monotone_triples() {
        let p = linear();
        assert!(phit_additivity_check(&p, 1, 0.2, 0.3, 0.4, &cfg()).unwrap());
        assert!(phit_additivity_check(&p, 1, 0.2, 0.3, 0.3, &cfg()).unwrap());
        let pm = monod();
        assert!(phit_additivity_check(&pm, 1, 0.1, 0.2, 0.3, &cfg()).unwrap());
    }

    #[test]
    fn additivity_rejects_straddling_triples() {
        let p = linear();
        // 0.6 is above s_bar_1 = 0.5 while the others are below.
        assert!(matches!(
            phit_additivity_check(&p, 1, 0.2, 0.3, 0.6, &cfg()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn trap_property_and_monotone_approach() {
        let p = monod();
        let c = cfg();
        let s_bar = equilibrium(&p, 2, &c).unwrap();
        let mut prev = 0.05;
        // Horizon short enough that the orbit has not saturated to the
        // equilibrium at integrator precision.
        for i in 1..=20 {
            let t = i as f64 * 0.1;
            let v = flow(&p, 2, 0.05, t, &c).unwrap();
            assert!(v > prev && v < s_bar, "monotone increase bounded by equilibrium (t = {t})");
            prev = v;
        }
        assert!((s_bar - prev) <= (s_bar - 0.05) + 1e-12);
    }
}

//! Exact stochastic simulation of the coupled process `(X_t, S_t)`.
//!
//! Jumps are produced by thinning: candidates arrive at the constant rate
//! `(D + b) x` where `b` bounds the per-capita division rate along the
//! current flow segment; a candidate at elapsed `u` with substrate `s_u` is
//! accepted as a washout with probability `D / (D + b)`, as a division with
//! probability `mu(s_u) / (D + b)`, and rejected otherwise. The accepted
//! event times are exact in distribution. Between jumps the substrate
//! follows the deterministic flow.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, FlowSolverConfig};
use crate::model::{ChemostatParams, HybridState};

/// Reproducible stream of randomness: the ChaCha stream counter gives
/// statistically independent substreams of one master seed, so replica `i`
/// can own stream `i` and parallel ensembles stay bit-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngStream { master_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Runs `n` independent replicas on the rayon pool, replica `i` owning
/// stream `i` of `master_seed`. Results come back in replica order, so the
/// aggregate is deterministic no matter how work was scheduled.
pub fn run_replicas<T, F>(n: u64, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut ChaCha12Rng) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(master_seed, i).rng();
            f(i, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JumpKind {
    Division,
    Washout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    /// Absolute event time.
    pub time: f64,
    pub kind: JumpKind,
    /// Population right after the jump.
    pub x_after: u64,
    /// Substrate concentration at the jump (continuous across it).
    pub s_at_jump: f64,
}

/// Event log of one path over `[0, horizon]`. Between events the substrate
/// follows the flow exactly; dense queries re-integrate from the last event.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub initial: HybridState,
    pub events: Vec<JumpEvent>,
    pub horizon: f64,
    pub extinct_at: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    t1: f64,
    x: u64,
    s0: f64,
}

impl Trajectory {
    fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let mut t = 0.0;
        let mut x = self.initial.x;
        let mut s = self.initial.s;
        for e in &self.events {
            out.push(Segment { t0: t, t1: e.time, x, s0: s });
            t = e.time;
            x = e.x_after;
            s = e.s_at_jump;
        }
        out.push(Segment { t0: t, t1: self.horizon, x, s0: s });
        out
    }

    /// State at `t in [0, horizon]` (right-continuous in the jumps).
    pub fn state_at(&self, params: &ChemostatParams, t: f64, cfg: &FlowSolverConfig) -> Result<HybridState> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!("query time {t} outside [0, {}]", self.horizon)));
        }
        for seg in self.segments() {
            if t < seg.t1 || (t == seg.t1 && t == self.horizon) {
                let s = flow::flow(params, seg.x, seg.s0, t - seg.t0, cfg)?;
                return Ok(HybridState { x: seg.x, s });
            }
        }
        unreachable!("segment cover of [0, horizon]")
    }

    /// Path integral of `f(X_u, S_u)` over `[0, horizon]`, computed segment
    /// by segment with the flow integrator.
    pub fn integrate_along<F>(&self, params: &ChemostatParams, f: F, cfg: &FlowSolverConfig) -> Result<f64>
    where
        F: Fn(u64, f64) -> f64,
    {
        let tol = crate::numeric::OdeTol { abs: cfg.abs_tol, rel: cfg.rel_tol, max_step: cfg.max_step };
        let mut total = 0.0;
        for seg in self.segments() {
            if seg.t1 <= seg.t0 {
                continue;
            }
            let x = seg.x;
            let rhs = |_t: f64, y: &[f64; 2]| [params.substrate_rhs(x, y[0]), f(x, y[0])];
            let y = crate::numeric::integrate(&rhs, 0.0, [seg.s0, 0.0], seg.t1 - seg.t0, &tol)?;
            total += y[1];
        }
        Ok(total)
    }
}

/// Outcome of advancing one flow segment: either a jump happened (`event`
/// set, `state` is the post-jump state) or the cap was reached first.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepOutcome {
    pub state: HybridState,
    /// Time elapsed within this call.
    pub elapsed: f64,
    pub event: Option<JumpKind>,
}

fn exp_sample<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U is in (0, 1], so the log never sees zero.
    -(1.0 - rng.gen::<f64>()).ln() / rate
}

/// Advances the process from `state` by at most `t_cap`, producing the next
/// jump (exact in distribution) or the capped state.
///
/// `rate_bound` must dominate the per-capita division rate along the whole
/// segment, i.e. `rate_bound >= mu(max(s_bar_1, state.s))`.
pub fn step<R: Rng>(
    params: &ChemostatParams,
    state: HybridState,
    rate_bound: f64,
    t_cap: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<StepOutcome> {
    if state.x == 0 {
        return Err(Error::Precondition("step from the absorbing state x = 0".into()));
    }
    if !(t_cap >= 0.0) {
        return Err(Error::Precondition(format!("step needs t_cap >= 0, got {t_cap}")));
    }
    let needed = params.division_rate_bound(state.s);
    let slack = 1e-9 * needed.max(1.0);
    if rate_bound + slack < needed {
        return Err(Error::Precondition(format!(
            "rate bound {rate_bound} below the segment division-rate bound {needed}"
        )));
    }
    let d = params.dilution();
    let total_rate = (d + rate_bound) * state.x as f64;
    let p_washout = d / (d + rate_bound);
    let mut elapsed = 0.0;
    let mut s = state.s;
    loop {
        let gap = exp_sample(rng, total_rate);
        if elapsed + gap >= t_cap {
            let s_cap = flow::flow(params, state.x, s, t_cap - elapsed, cfg)?;
            return Ok(StepOutcome { state: HybridState { x: state.x, s: s_cap }, elapsed: t_cap, event: None });
        }
        elapsed += gap;
        s = flow::flow(params, state.x, s, gap, cfg)?;
        let mu_here = params.mu(s);
        if mu_here > rate_bound + slack {
            return Err(Error::Invariant(format!(
                "thinning bound violated: mu({s}) = {mu_here} > bound {rate_bound} (x = {}, started at s = {})",
                state.x, state.s
            )));
        }
        let u: f64 = rng.gen();
        if u < p_washout {
            return Ok(StepOutcome {
                state: HybridState { x: state.x - 1, s },
                elapsed,
                event: Some(JumpKind::Washout),
            });
        }
        if u < p_washout + mu_here.min(rate_bound) / (d + rate_bound) {
            return Ok(StepOutcome {
                state: HybridState { x: state.x + 1, s },
                elapsed,
                event: Some(JumpKind::Division),
            });
        }
        // rejected candidate: keep flowing with the same bound
    }
}

/// Simulates one path over `[0, horizon]` and returns its event log.
pub fn simulate_path<R: Rng>(
    params: &ChemostatParams,
    x0: u64,
    s0: f64,
    horizon: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<Trajectory> {
    if !(s0 >= 0.0 && s0.is_finite()) {
        return Err(Error::Domain(format!("initial substrate must be >= 0, got {s0}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be >= 0, got {horizon}")));
    }
    let initial = HybridState { x: x0, s: s0 };
    let mut tr = Trajectory { initial, events: Vec::new(), horizon, extinct_at: (x0 == 0).then_some(0.0) };
    if x0 == 0 {
        return Ok(tr);
    }
    let mut t = 0.0;
    let mut state = initial;
    while t < horizon {
        let bound = params.division_rate_bound(state.s);
        let out = step(params, state, bound, horizon - t, rng, cfg)?;
        t += out.elapsed;
        state = out.state;
        match out.event {
            None => break,
            Some(kind) => {
                tr.events.push(JumpEvent { time: t, kind, x_after: state.x, s_at_jump: state.s });
                if state.x == 0 {
                    tr.extinct_at = Some(t);
                    break;
                }
            }
        }
    }
    Ok(tr)
}

/// State at time `t` without storing the event log. After extinction the
/// substrate keeps flowing with zero consumers.
pub fn evolve_to<R: Rng>(
    params: &ChemostatParams,
    mut state: HybridState,
    t: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<HybridState> {
    let mut remaining = t;
    while remaining > 0.0 && state.x > 0 {
        let bound = params.division_rate_bound(state.s);
        let out = step(params, state, bound, remaining, rng, cfg)?;
        remaining -= out.elapsed;
        state = out.state;
    }
    if state.x == 0 && remaining > 0.0 {
        state.s = flow::flow(params, 0, state.s, remaining, cfg)?;
    }
    Ok(state)
}

/// A stopping time observed exactly, or censored at a hard cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StoppingTime {
    Observed(f64),
    Censored(f64),
}

impl StoppingTime {
    pub fn observed(&self) -> Option<f64> {
        match *self {
            StoppingTime::Observed(t) => Some(t),
            StoppingTime::Censored(_) => None,
        }
    }
}

/// First time the population hits zero, censored at `t_cap`.
pub fn extinction_time<R: Rng>(
    params: &ChemostatParams,
    x0: u64,
    s0: f64,
    t_cap: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<StoppingTime> {
    if !(t_cap > 0.0) {
        return Err(Error::Precondition(format!("extinction_time needs t_cap > 0, got {t_cap}")));
    }
    if x0 == 0 {
        return Ok(StoppingTime::Observed(0.0));
    }
    let mut state = HybridState { x: x0, s: s0 };
    let mut t = 0.0;
    while t < t_cap {
        let bound = params.division_rate_bound(state.s);
        let out = step(params, state, bound, t_cap - t, rng, cfg)?;
        t += out.elapsed;
        state = out.state;
        if out.event.is_none() {
            break;
        }
        if state.x == 0 {
            return Ok(StoppingTime::Observed(t));
        }
    }
    Ok(StoppingTime::Censored(t_cap))
}

/// First time with `X_t = target_x` and `|S_t - target_s| <= halfwidth`,
/// looking only at `t >= not_before`, censored at `t_cap`. Detection is by
/// root finding on the monotone flow inside each inter-jump segment; levels
/// at or beyond the segment equilibrium are never crossed.
#[allow(clippy::too_many_arguments)]
pub fn hitting_time_box_after<R: Rng>(
    params: &ChemostatParams,
    x0: u64,
    s0: f64,
    target_x: u64,
    target_s: f64,
    halfwidth: f64,
    not_before: f64,
    t_cap: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<StoppingTime> {
    if halfwidth < 0.0 {
        return Err(Error::Precondition(format!("box halfwidth must be >= 0, got {halfwidth}")));
    }
    if !(t_cap > 0.0) {
        return Err(Error::Precondition(format!("hitting time needs t_cap > 0, got {t_cap}")));
    }
    if target_x == 0 {
        return Err(Error::Precondition("hitting target must have x >= 1".into()));
    }
    let lo = target_s - halfwidth;
    let hi = target_s + halfwidth;
    let target_eq = flow::equilibrium(params, target_x, cfg)?;

    let mut t = 0.0;
    let mut state = HybridState { x: x0, s: s0 };
    while state.x > 0 && t < t_cap {
        let bound = params.division_rate_bound(state.s);
        let out = step(params, state, bound, t_cap - t, rng, cfg)?;
        let seg_end = t + out.elapsed;
        if state.x == target_x && seg_end > not_before {
            let (mut rel0, mut s_here) = (0.0, state.s);
            if t < not_before {
                rel0 = not_before - t;
                s_here = flow::flow(params, state.x, state.s, rel0, cfg)?;
            }
            if let Some(dt) =
                segment_box_hit(params, state.x, s_here, seg_end - t - rel0, lo, hi, target_eq, cfg)?
            {
                return Ok(StoppingTime::Observed(t + rel0 + dt));
            }
        }
        t = seg_end;
        state = out.state;
        if out.event.is_none() {
            break;
        }
    }
    Ok(StoppingTime::Censored(t_cap))
}

/// First hitting time of the box around `(target_x, target_s)` from time 0.
#[allow(clippy::too_many_arguments)]
pub fn hitting_time_box<R: Rng>(
    params: &ChemostatParams,
    x0: u64,
    s0: f64,
    target_x: u64,
    target_s: f64,
    halfwidth: f64,
    t_cap: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<StoppingTime> {
    hitting_time_box_after(params, x0, s0, target_x, target_s, halfwidth, 0.0, t_cap, rng, cfg)
}

/// Entry time of the monotone flow started at `s0` (population `x`, segment
/// length `len`) into the band `[lo, hi]`, or `None`.
#[allow(clippy::too_many_arguments)]
fn segment_box_hit(
    params: &ChemostatParams,
    x: u64,
    s0: f64,
    len: f64,
    lo: f64,
    hi: f64,
    s_bar_x: f64,
    cfg: &FlowSolverConfig,
) -> Result<Option<f64>> {
    if len < 0.0 {
        return Ok(None);
    }
    if s0 >= lo && s0 <= hi {
        return Ok(Some(0.0));
    }
    // The orbit is the half-open interval from s0 towards the equilibrium;
    // levels at or past the equilibrium are unreachable.
    let level = if s0 < s_bar_x {
        if s0 > hi || lo >= s_bar_x {
            return Ok(None);
        }
        lo
    } else {
        if s0 < lo || hi <= s_bar_x {
            return Ok(None);
        }
        hi
    };
    let s_end = flow::flow(params, x, s0, len, cfg)?;
    let crossed = if s0 < s_bar_x { s_end >= level } else { s_end <= level };
    if !crossed {
        return Ok(None);
    }
    let toward = if s0 < s_bar_x { 1.0 } else { -1.0 };
    let dt = crate::numeric::bisect(
        |u| flow::flow(params, x, s0, u, cfg).map(|v| toward * (v - level)).unwrap_or(f64::NAN),
        0.0,
        len,
    )?;
    Ok(Some(dt))
}

/// `P(T_1 > delta)` for the first jump from `(x, s)`: deterministic
/// quadrature of the hazard `(mu + D) x` along the flow.
pub fn first_event_survival(
    params: &ChemostatParams,
    x: u64,
    s: f64,
    delta: f64,
    cfg: &FlowSolverConfig,
) -> Result<f64> {
    if x == 0 {
        return Err(Error::Precondition("first_event_survival needs x >= 1".into()));
    }
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("delta must be >= 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(1.0);
    }
    let tol = crate::numeric::OdeTol { abs: cfg.abs_tol.min(1e-12), rel: cfg.rel_tol.min(1e-10), max_step: cfg.max_step };
    let xf = x as f64;
    let rhs = |_t: f64, y: &[f64; 2]| [params.substrate_rhs(x, y[0]), (params.mu(y[0]) + params.dilution()) * xf];
    let y = crate::numeric::integrate(&rhs, 0.0, [s, 0.0], delta, &tol)?;
    Ok((-y[1]).exp())
}

/// Result of running the process coupled with a dominating pure-birth
/// process from `S_0 = 0`: the birth process jumps at per-capita rate
/// `mu(D s_in t)`, co-jumping with every division, so `X_u <= Z_u` pathwise.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct YuleCoupling {
    pub x_final: u64,
    pub z_final: u64,
    /// Whether `X_u <= Z_u` held at every event (true by construction).
    pub dominated: bool,
    /// Per-capita birth rate used for the dominating process.
    pub birth_rate: f64,
}

/// Couples `(X, S)` started from `(x0, 0)` with a pure-birth process `Z` of
/// per-capita rate `mu(D s_in t)` over `[0, t]`.
pub fn yule_coupled<R: Rng>(
    params: &ChemostatParams,
    x0: u64,
    t: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<YuleCoupling> {
    if x0 == 0 {
        return Err(Error::Precondition("yule_coupled needs x0 >= 1".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("yule_coupled needs t > 0, got {t}")));
    }
    // With S_0 = 0 the substrate stays below D s_in t on [0, t], so this
    // dominates every division rate along the path.
    let birth_rate = params.mu(params.dilution() * params.s_in() * t);
    let d = params.dilution();
    let mut x = x0;
    let mut z = x0;
    let mut s = 0.0f64;
    let mut clock = 0.0;
    let mut dominated = true;
    while clock < t {
        if z > 10_000_000 {
            return Err(Error::Numeric("dominating birth process exceeded 1e7 individuals".into()));
        }
        let total = birth_rate * z as f64 + d * x as f64;
        let gap = exp_sample(rng, total);
        if clock + gap >= t {
            break;
        }
        clock += gap;
        s = flow::flow(params, x, s, gap, cfg)?;
        let mu_here = params.mu(s);
        if mu_here > birth_rate * (1.0 + 1e-9) {
            return Err(Error::Invariant(format!(
                "coupled bound violated: mu({s}) = {mu_here} > {birth_rate}"
            )));
        }
        let u: f64 = rng.gen() ;
        let p_washout = d * x as f64 / total;
        let p_cobirth = mu_here.min(birth_rate) * x as f64 / total;
        if u < p_washout {
            x -= 1;
        } else if u < p_washout + p_cobirth {
            x += 1;
            z += 1;
        } else {
            z += 1;
        }
        if x > z {
            dominated = false;
        }
    }
    Ok(YuleCoupling { x_final: x, z_final: z, dominated, birth_rate })
}

//! Estimation of the quasi-stationary distribution, the extinction rate
//! and the survival-propensity function, plus the Yaglom-convergence and
//! mass-ratio diagnostics.
//!
//! Two estimators with different bias profiles are provided for the
//! conditioned law: naive conditioning (simulate independent paths, keep
//! survivors) and a Fleming-Viot particle system (extinct particles are
//! instantly resampled from the survivors). Their agreement is itself a
//! diagnostic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, FlowSolverConfig};
use crate::model::{ChemostatParams, HybridState};
use crate::simulate::{self, StoppingTime};
use crate::stats::{self, Histogram2d, HistogramSpec, TvEstimate};

/// Stable seed derivation for independent sub-experiments of one run.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    // splitmix64 round of master xor golden-ratio multiple of the tag
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Empirical estimate of the conditioned law at one time.
#[derive(Debug, Clone, Serialize)]
pub struct QsdEstimate {
    pub histogram: Histogram2d,
    pub time: f64,
    /// Paths (or particles) behind the estimate.
    pub n_source: u64,
    pub survivors: u64,
    /// All sampled substrate values were inside `(0, s_bar_1)`.
    pub inside_core: bool,
}

impl QsdEstimate {
    fn from_survivors(
        params: &ChemostatParams,
        survivors: &[(u64, f64)],
        time: f64,
        n_source: u64,
        s_bins: usize,
    ) -> Result<Self> {
        if survivors.is_empty() {
            return Err(Error::Power(format!("no survivors at t = {time}")));
        }
        let s1 = params.s_bar_1();
        let max_s = survivors.iter().map(|&(_, s)| s).fold(0.0, f64::max);
        let inside_core = max_s < s1 + 1e-9;
        let s_hi = if inside_core { s1 } else { max_s * (1.0 + 1e-9) };
        let spec = HistogramSpec::from_samples(survivors, 0.0, s_hi, s_bins)?;
        Ok(QsdEstimate {
            histogram: Histogram2d::from_samples(spec, survivors)?,
            time,
            n_source,
            survivors: survivors.len() as u64,
            inside_core,
        })
    }
}

/// How an extinction-rate estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LambdaMethod {
    SurvivalRegression,
    FlemingViotKillRate,
}

/// Extinction-rate estimate with a 95% confidence interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaEstimate {
    pub lambda_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: LambdaMethod,
    /// Time window the estimate was read from.
    pub window: (f64, f64),
}

/// Records the state of every path of one ensemble at each checkpoint
/// (extinct paths keep `x = 0` and a flowing substrate).
pub fn states_at_times(
    params: &ChemostatParams,
    x0: u64,
    s0: f64,
    times: &[f64],
    n: u64,
    master_seed: u64,
    cfg: &FlowSolverConfig,
) -> Result<Vec<Vec<HybridState>>> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(Error::Precondition("checkpoint times must be nonnegative and strictly increasing".into()));
    }
    let per_path = simulate::run_replicas(n, master_seed, |_i, rng| {
        let mut state = HybridState { x: x0, s: s0 };
        let mut prev = 0.0;
        let mut row = Vec::with_capacity(times.len());
        for &t in times {
            state = simulate::evolve_to(params, state, t - prev, rng, cfg)?;
            row.push(state);
            prev = t;
        }
        Ok(row)
    })?;
    let mut per_time = vec![Vec::with_capacity(n as usize); times.len()];
    for row in &per_path {
        for (j, st) in row.iter().enumerate() {
            per_time[j].push(*st);
        }
    }
    Ok(per_time)
}

fn survivors_of(states: &[HybridState]) -> Vec<(u64, f64)> {
    states.iter().filter(|st| st.x > 0).map(|st| (st.x, st.s)).collect()
}

/// Conditioned law at time `t` by naive conditioning: simulate `n`
/// independent paths, histogram the survivors.
pub fn estimate_qsd_naive(
    params: &ChemostatParams,
    x0: u64,
    s0: f64,
    t: f64,
    n: u64,
    master_seed: u64,
    cfg: &FlowSolverConfig,
) -> Result<QsdEstimate> {
    if n < 1_000 {
        return Err(Error::Power(format!("naive estimator needs n >= 1000, got {n}")));
    }
    if x0 == 0 {
        return Err(Error::Precondition("naive estimator needs x0 >= 1".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::Precondition(format!("naive estimator needs t >= 0, got {t}")));
    }
    if t == 0.0 {
        // the conditioned law at time zero is the point mass at the start
        return QsdEstimate::from_survivors(params, &vec![(x0, s0); n as usize], 0.0, n, 64);
    }
    let states = states_at_times(params, x0, s0, &[t], n, master_seed, cfg)?.remove(0);
    let survivors = survivors_of(&states);
    if survivors.len() < 100 {
        return Err(Error::Power(format!(
            "only {} of {n} paths survive to t = {t}; use the Fleming-Viot estimator",
            survivors.len()
        )));
    }
    QsdEstimate::from_survivors(params, &survivors, t, n, 64)
}

/// Interacting ensemble for the Fleming-Viot approximation.
#[derive(Debug, Clone, Serialize)]
pub struct ParticleEnsemble {
    pub particles: Vec<HybridState>,
    pub time: f64,
    pub resample_count: u64,
}

impl ParticleEnsemble {
    /// All particles at one starting point.
    pub fn at_point(n: usize, x: u64, s: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Precondition("a Fleming-Viot ensemble needs at least 2 particles".into()));
        }
        if x == 0 {
            return Err(Error::Precondition("particles must start alive (x >= 1)".into()));
        }
        Ok(ParticleEnsemble { particles: vec![HybridState { x, s }; n], time: 0.0, resample_count: 0 })
    }

    /// Particles drawn from an estimated conditioned law.
    pub fn from_estimate<R: Rng>(n: usize, estimate: &QsdEstimate, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::Precondition("a Fleming-Viot ensemble needs at least 2 particles".into()));
        }
        let particles = (0..n)
            .map(|_| {
                let (x, s) = estimate.histogram.sample(rng);
                HybridState { x, s }
            })
            .collect();
        Ok(ParticleEnsemble { particles, time: estimate.time, resample_count: 0 })
    }
}

#[derive(PartialEq)]
struct QueueKey {
    time: f64,
    idx: usize,
}

impl Eq for QueueKey {}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want earliest first
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Evolves the ensemble to `ensemble.time + t` with Fleming-Viot
/// resampling: a particle washed out to zero is instantly replaced by a
/// uniformly chosen survivor's current state. Candidate events are
/// serialized through a queue ordered by event time, so the evolution is
/// deterministic given the generator.
pub fn evolve_fleming_viot<R: Rng>(
    params: &ChemostatParams,
    ensemble: &ParticleEnsemble,
    t: f64,
    rng: &mut R,
    cfg: &FlowSolverConfig,
) -> Result<(ParticleEnsemble, QsdEstimate, LambdaEstimate)> {
    let n = ensemble.particles.len();
    if n < 2 {
        return Err(Error::Precondition(
            "Fleming-Viot needs at least 2 particles (a lone particle cannot be resampled)".into(),
        ));
    }
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("evolution span must be positive, got {t}")));
    }
    if ensemble.particles.iter().any(|p| p.x == 0) {
        return Err(Error::Invariant("dead particle in the initial ensemble".into()));
    }
    let t0 = ensemble.time;
    let t_end = t0 + t;
    let half_time = t0 + 0.5 * t;
    let d = params.dilution();

    // particle state at its own last-update time
    let mut xs: Vec<u64> = ensemble.particles.iter().map(|p| p.x).collect();
    let mut ss: Vec<f64> = ensemble.particles.iter().map(|p| p.s).collect();
    let mut at: Vec<f64> = vec![t0; n];
    let mut bounds: Vec<f64> = ss.iter().map(|&s| params.division_rate_bound(s)).collect();

    let mut queue = BinaryHeap::with_capacity(n);
    for i in 0..n {
        let rate = (d + bounds[i]) * xs[i] as f64;
        let gap = -(1.0 - rng.gen::<f64>()).ln() / rate;
        queue.push(QueueKey { time: t0 + gap, idx: i });
    }

    let mut kills_total = 0u64;
    let mut kills_second_half = 0u64;

    while let Some(QueueKey { time: u, idx: i }) = queue.pop() {
        if u >= t_end {
            break;
        }
        // advance particle i to its candidate time
        let s_u = flow::flow(params, xs[i], ss[i], u - at[i], cfg)?;
        let b = bounds[i];
        let mu_u = params.mu(s_u);
        if mu_u > b * (1.0 + 1e-9) {
            return Err(Error::Invariant(format!("thinning bound violated in ensemble: mu({s_u}) > {b}")));
        }
        let v: f64 = rng.gen();
        if v < d / (d + b) {
            if xs[i] == 1 {
                // washout to zero: resample uniformly from the others
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let s_donor = flow::flow(params, xs[j], ss[j], u - at[j], cfg)?;
                xs[i] = xs[j];
                ss[i] = s_donor;
                kills_total += 1;
                if u >= half_time {
                    kills_second_half += 1;
                }
            } else {
                xs[i] -= 1;
                ss[i] = s_u;
            }
        } else if v < (d + mu_u.min(b)) / (d + b) {
            xs[i] += 1;
            ss[i] = s_u;
        } else {
            ss[i] = s_u;
        }
        at[i] = u;
        bounds[i] = params.division_rate_bound(ss[i]);
        let rate = (d + bounds[i]) * xs[i] as f64;
        let gap = -(1.0 - rng.gen::<f64>()).ln() / rate;
        queue.push(QueueKey { time: u + gap, idx: i });
    }

    // synchronize every particle at the final time
    for i in 0..n {
        ss[i] = flow::flow(params, xs[i], ss[i], t_end - at[i], cfg)?;
        at[i] = t_end;
    }
    let particles: Vec<HybridState> = xs.iter().zip(&ss).map(|(&x, &s)| HybridState { x, s }).collect();
    let final_ensemble = ParticleEnsemble {
        particles: particles.clone(),
        time: t_end,
        resample_count: ensemble.resample_count + kills_total,
    };
    let samples: Vec<(u64, f64)> = particles.iter().map(|p| (p.x, p.s)).collect();
    let estimate = QsdEstimate::from_survivors(params, &samples, t_end, n as u64, 64)?;

    // kill rate over the second half of the run; Poisson error bars
    let half_span = 0.5 * t;
    let lambda_hat = kills_second_half as f64 / (n as f64 * half_span);
    let err = 1.96 * (kills_second_half.max(1) as f64).sqrt() / (n as f64 * half_span);
    let lambda = LambdaEstimate {
        lambda_hat,
        ci_low: (lambda_hat - err).max(0.0),
        ci_high: lambda_hat + err,
        method: LambdaMethod::FlemingViotKillRate,
        window: (half_time, t_end),
    };
    Ok((final_ensemble, estimate, lambda))
}

/// Extinction rate by regression of the empirical log-survival over the
/// window where survival lies in `[0.01, 0.5]`: below, the binomial error
/// explodes; above, the pre-asymptotic transient biases the slope.
pub fn estimate_lambda_survival(
    params: &ChemostatParams,
    x0: u64,
    s0: f64,
    times: &[f64],
    n: u64,
    master_seed: u64,
    cfg: &FlowSolverConfig,
) -> Result<LambdaEstimate> {
    if times.len() < 4 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("survival regression needs >= 4 strictly increasing times".into()));
    }
    if n < 10_000 {
        return Err(Error::Power(format!("survival regression needs n >= 10^4, got {n}")));
    }
    if x0 == 0 {
        return Err(Error::Precondition("survival regression needs x0 >= 1".into()));
    }
    let t_max = *times.last().unwrap();
    let ext: Vec<Option<f64>> = simulate::run_replicas(n, master_seed, |_i, rng| {
        Ok(match simulate::extinction_time(params, x0, s0, t_max, rng, cfg)? {
            StoppingTime::Observed(v) => Some(v),
            StoppingTime::Censored(_) => None,
        })
    })?;
    let survivors_at = |t: f64| -> u64 { ext.iter().filter(|e| e.map_or(true, |v| v > t)).count() as u64 };
    let mut ws: Vec<(f64, u64)> = Vec::new();
    for &t in times {
        let s = survivors_at(t);
        let frac = s as f64 / n as f64;
        if (0.01..=0.5).contains(&frac) {
            ws.push((t, s));
        }
    }
    if ws.len() < 2 {
        return Err(Error::Power(format!(
            "only {} grid points fall in the usable survival window [0.01, 0.5]; adjust the grid",
            ws.len()
        )));
    }
    let ts: Vec<f64> = ws.iter().map(|&(t, _)| t).collect();
    let counts: Vec<u64> = ws.iter().map(|&(_, s)| s).collect();
    let (rate, se) = stats::fit_survival_decay(&ts, &counts, n)?;
    Ok(LambdaEstimate {
        lambda_hat: rate,
        ci_low: rate - 1.96 * se,
        ci_high: rate + 1.96 * se,
        method: LambdaMethod::SurvivalRegression,
        window: (ts[0], *ts.last().unwrap()),
    })
}

/// Estimate of the survival propensity `h(x, s)` at one starting point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HEstimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Raw survival fraction the estimate is based on.
    pub survival: f64,
    pub t: f64,
}

/// `h(x, s) ~= e^{lambda t} P(T_ext > t)` for large `t`; the confidence
/// interval combines the binomial error with the rate estimate's interval.
pub fn estimate_h(
    params: &ChemostatParams,
    x: u64,
    s: f64,
    t_large: f64,
    n: u64,
    lambda: &LambdaEstimate,
    master_seed: u64,
    cfg: &FlowSolverConfig,
) -> Result<HEstimate> {
    if x == 0 {
        return Err(Error::Precondition("estimate_h needs x >= 1".into()));
    }
    let alive = simulate::run_replicas(n, master_seed, |_i, rng| {
        Ok(matches!(
            simulate::extinction_time(params, x, s, t_large, rng, cfg)?,
            StoppingTime::Censored(_)
        ) as u64)
    })?;
    let p_hat = alive.iter().sum::<u64>() as f64 / n as f64;
    if p_hat < 0.005 {
        return Err(Error::Power(format!(
            "survival {p_hat:.4} at t = {t_large} too small for an h estimate; lower t_large"
        )));
    }
    let se = stats::binomial_se(p_hat, n);
    Ok(HEstimate {
        value: (lambda.lambda_hat * t_large).exp() * p_hat,
        ci_low: (lambda.ci_low * t_large).exp() * (p_hat - 1.96 * se).max(0.0),
        ci_high: (lambda.ci_high * t_large).exp() * (p_hat + 1.96 * se),
        survival: p_hat,
        t: t_large,
    })
}

/// Total-variation distances between two conditioned laws along a time
/// grid, with a fitted exponential decay rate.
#[derive(Debug, Clone, Serialize)]
pub struct YaglomReport {
    pub times: Vec<f64>,
    pub tv: Vec<TvEstimate>,
    pub survivors_a: Vec<u64>,
    pub survivors_b: Vec<u64>,
    /// OLS fit of `-log TV` against `t` (rate, standard error), when the
    /// distances allow it.
    pub decay_rate: Option<(f64, f64)>,
}

/// Compares the conditioned laws started from `ic_a` and `ic_b` at each
/// grid time (shared binning per time, bootstrap error bars).
#[allow(clippy::too_many_arguments)]
pub fn yaglom_distance(
    params: &ChemostatParams,
    ic_a: (u64, f64),
    ic_b: (u64, f64),
    times: &[f64],
    n: u64,
    master_seed: u64,
    cfg: &FlowSolverConfig,
) -> Result<YaglomReport> {
    if ic_a.0 == 0 || ic_b.0 == 0 {
        return Err(Error::Precondition("initial conditions must have x >= 1".into()));
    }
    let states_a = states_at_times(params, ic_a.0, ic_a.1, times, n, derive_seed(master_seed, 1), cfg)?;
    let states_b = states_at_times(params, ic_b.0, ic_b.1, times, n, derive_seed(master_seed, 2), cfg)?;
    let mut tvs = Vec::with_capacity(times.len());
    let mut surv_a = Vec::with_capacity(times.len());
    let mut surv_b = Vec::with_capacity(times.len());
    let mut boot_rng = simulate::RngStream::new(derive_seed(master_seed, 3), 0).rng();
    for j in 0..times.len() {
        let a = survivors_of(&states_a[j]);
        let b = survivors_of(&states_b[j]);
        if a.len() < 50 || b.len() < 50 {
            return Err(Error::Power(format!(
                "too few survivors at t = {} ({} and {}); increase n or shorten the grid",
                times[j],
                a.len(),
                b.len()
            )));
        }
        surv_a.push(a.len() as u64);
        surv_b.push(b.len() as u64);
        let s1 = params.s_bar_1();
        let max_s = a.iter().chain(&b).map(|&(_, s)| s).fold(s1, f64::max);
        let union: Vec<(u64, f64)> = a.iter().chain(&b).copied().collect();
        let spec = HistogramSpec::from_samples(&union, 0.0, max_s * (1.0 + 1e-9), 64)?;
        tvs.push(stats::bootstrap_tv(&a, &b, spec, 200, &mut boot_rng)?);
    }
    let decay_rate = if times.len() >= 3 && tvs.iter().all(|e| e.tv > 0.0) {
        let ys: Vec<f64> = tvs.iter().map(|e| -e.tv.ln()).collect();
        stats::ols_slope(times, &ys)
    } else {
        None
    };
    Ok(YaglomReport { times: times.to_vec(), tv: tvs, survivors_a: surv_a, survivors_b: surv_b, decay_rate })
}

/// Mass-ratio diagnostic over a compact rectangle: expected `psi`-mass at
/// the corner/center probe points along a time grid and the worst
/// pairwise ratio at each time, with a growth-trend test.
#[derive(Debug, Clone, Serialize)]
pub struct MassRatioReport {
    pub points: Vec<(u64, f64)>,
    pub times: Vec<f64>,
    /// `psi_mean[p][j]` is the Monte-Carlo mean of `psi` from point `p`
    /// at time `times[j]`, with its standard error.
    pub psi_mean: Vec<Vec<(f64, f64)>>,
    pub max_ratio: Vec<f64>,
    /// OLS slope of the max ratio against time with standard error.
    pub trend: Option<(f64, f64)>,
    /// No statistically significant positive growth trend at 95%.
    pub bounded: bool,
}

/// Probes the mass-ratio inequality on `K = [1, n_k] x [s_lo, s_hi]`.
#[allow(clippy::too_many_arguments)]
pub fn mass_ratio_diagnostic(
    params: &ChemostatParams,
    n_k: u64,
    s_lo: f64,
    s_hi: f64,
    times: &[f64],
    n: u64,
    master_seed: u64,
    cfg: &FlowSolverConfig,
) -> Result<MassRatioReport> {
    let s1 = params.s_bar_1();
    if n_k == 0 || !(0.0 < s_lo && s_lo <= s_hi && s_hi < s1) {
        return Err(Error::Precondition(format!(
            "compact must satisfy n_k >= 1 and 0 < s_lo <= s_hi < {s1}"
        )));
    }
    let mid_x = (1 + n_k) / 2;
    let mid_s = 0.5 * (s_lo + s_hi);
    let mut points = vec![(1, s_lo), (1, s_hi), (n_k, s_lo), (n_k, s_hi), (mid_x, mid_s)];
    points.dedup();
    let mut psi_mean = Vec::with_capacity(points.len());
    for (p_idx, &(x, s)) in points.iter().enumerate() {
        let per_time = states_at_times(params, x, s, times, n, derive_seed(master_seed, p_idx as u64), cfg)?;
        let row: Vec<(f64, f64)> = per_time
            .iter()
            .map(|states| {
                let vals: Vec<f64> = states.iter().map(|st| st.x as f64).collect();
                stats::mean_se(&vals)
            })
            .collect();
        psi_mean.push(row);
    }
    let mut max_ratio = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let mut worst: f64 = 0.0;
        for a in 0..points.len() {
            for b in 0..points.len() {
                let (ma, _) = psi_mean[a][j];
                let (mb, _) = psi_mean[b][j];
                if mb > 0.0 {
                    worst = worst.max(ma / mb);
                }
            }
        }
        max_ratio.push(worst);
    }
    let trend = stats::ols_slope(times, &max_ratio);
    let bounded = trend.map_or(false, |(slope, se)| slope - 1.96 * se <= 0.0);
    Ok(MassRatioReport { points, times: times.to_vec(), psi_mean, max_ratio, trend, bounded })
}

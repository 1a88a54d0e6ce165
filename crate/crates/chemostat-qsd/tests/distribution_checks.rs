//! Monte-Carlo distribution checks beyond the acceptance criteria:
//! almost-sure extinction, the degenerate exponential limit, the pure-birth
//! coupling, exponential moments of the outer-region exit time, survival
//! propensity estimates and the mass-ratio trend.

use chemostat_qsd::bounds;
use chemostat_qsd::flow::FlowSolverConfig;
use chemostat_qsd::lyapunov;
use chemostat_qsd::model::{ChemostatParams, GrowthLaw};
use chemostat_qsd::qsd::{self, derive_seed};
use chemostat_qsd::simulate::{self, StoppingTime};
use chemostat_qsd::stats;

fn linear() -> ChemostatParams {
    ChemostatParams::new(1.0, 2.0, 1.0, GrowthLaw::Linear { c: 3.0 }).unwrap()
}

fn cfg() -> FlowSolverConfig {
    FlowSolverConfig::default()
}

#[test]
fn extinction_is_almost_sure_at_long_horizons() {
    let p = linear();
    let c = cfg();
    let n = 10_000u64;
    let extinct = simulate::run_replicas(n, 0xD15, |_i, rng| {
        Ok(matches!(
            simulate::extinction_time(&p, 1, 0.25, 50.0, rng, &c)?,
            StoppingTime::Observed(_)
        ) as u64)
    })
    .unwrap()
    .iter()
    .sum::<u64>();
    let p_hat = extinct as f64 / n as f64;
    assert!(p_hat >= 0.99, "P(extinct by 50) = {p_hat}");
}

#[test]
fn extinction_time_is_exponential_when_growth_vanishes() {
    // c tiny: divisions are effectively impossible from x = 1, so the
    // extinction time is Exponential(D). Kolmogorov-Smirnov against the
    // exact CDF.
    let p = ChemostatParams::new(1.0, 2.0, 1.0, GrowthLaw::Linear { c: 1e-12 }).unwrap();
    let c = cfg();
    let n = 10_000u64;
    let mut times: Vec<f64> = simulate::run_replicas(n, 0xD16, |_i, rng| {
        Ok(match simulate::extinction_time(&p, 1, 0.25, 200.0, rng, &c)? {
            StoppingTime::Observed(t) => t,
            StoppingTime::Censored(t) => t,
        })
    })
    .unwrap();
    times.sort_by(|a, b| a.total_cmp(b));
    let mut ks: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let cdf = 1.0 - (-t).exp();
        let emp_hi = (i + 1) as f64 / n as f64;
        let emp_lo = i as f64 / n as f64;
        ks = ks.max((cdf - emp_lo).abs()).max((cdf - emp_hi).abs());
    }
    assert!(ks < 0.02, "KS distance {ks}");
}

#[test]
fn pure_birth_coupling_mean_matches_exponential_growth() {
    let p = linear();
    let c = cfg();
    let (x0, t) = (1u64, 0.5);
    let n = 20_000u64;
    let outs = simulate::run_replicas(n, 0xD17, |_i, rng| simulate::yule_coupled(&p, x0, t, rng, &c)).unwrap();
    assert!(outs.iter().all(|o| o.dominated), "pathwise domination");
    let zs: Vec<f64> = outs.iter().map(|o| o.z_final as f64).collect();
    let (mean, se) = stats::mean_se(&zs);
    let expected = x0 as f64 * (outs[0].birth_rate * t).exp();
    assert!((mean - expected).abs() <= 3.0 * se, "E[Z_t] = {mean} vs {expected} (se {se})");
}

#[test]
fn outer_region_exit_has_certified_exponential_moment() {
    let p = linear();
    let c = cfg();
    let g = lyapunov::scan_g_constants(&p).unwrap();
    for (k, x) in [1u64, 2].into_iter().enumerate() {
        let rep = bounds::exp_moment_check(&p, &g, x, p.s_bar_1(), 25.0, 5_000, derive_seed(0xD18, k as u64), &c).unwrap();
        assert!(rep.passed, "x = {x}: MC mean {} vs bound {}", rep.mc_mean, rep.bound);
        assert!(rep.reach_fraction > 0.0, "x = {x}: the inner region is reachable");
        assert!(!rep.inconclusive, "x = {x}: censored fraction {}", rep.censored_fraction);
    }
}

#[test]
fn h_estimates_are_positive_and_dominated_by_the_weight() {
    let p = linear();
    let c = cfg();
    let grid = [3.0, 4.5, 6.0, 7.5, 9.0, 10.5, 12.0];
    let lambda = qsd::estimate_lambda_survival(&p, 2, 0.25, &grid, 30_000, 0xD19, &c).unwrap();
    let lyap = lyapunov::select_parameters(&p, 2.0, 0.1).unwrap();
    let mut ratios = Vec::new();
    let mut values = Vec::new();
    for (k, (x, s)) in [(1u64, 0.1), (2, 0.25), (3, 0.4)].into_iter().enumerate() {
        let h = qsd::estimate_h(&p, x, s, 8.0, 30_000, &lambda, derive_seed(0xD19, k as u64 + 1), &c).unwrap();
        assert!(h.value > 0.0 && h.ci_high.is_finite());
        let w = lyapunov::w(&lyap, &p, x, s).unwrap();
        ratios.push(h.value / w);
        values.push((x, h.value));
    }
    assert!(ratios.iter().all(|r| r.is_finite()));
    // monotonicity in x is plausible but unproven: reported, never asserted
    println!("h estimates by starting count: {values:?}; max h/W on probe grid = {:.4}", ratios.iter().fold(0.0f64, |a, &b| a.max(b)));
}

#[test]
fn mass_ratio_shows_no_growth_trend() {
    let p = linear();
    let c = cfg();
    let times = [0.0, 2.0, 5.0, 10.0, 20.0];
    let rep = qsd::mass_ratio_diagnostic(&p, 5, 0.1, 0.4, &times, 20_000, 0xD1A, &c).unwrap();
    assert!((rep.max_ratio[0] - 5.0).abs() < 1e-12, "t = 0 ratio is n_k / 1");
    let (slope, se) = rep.trend.unwrap();
    assert!(rep.bounded, "max ratio trend {slope} +- {se} must not be significantly positive");
}

#[test]
fn lambda_ci_width_shrinks_like_sqrt_n() {
    let p = linear();
    let c = cfg();
    let grid = [3.0, 4.5, 6.0, 7.5, 9.0, 10.5, 12.0];
    let small = qsd::estimate_lambda_survival(&p, 2, 0.25, &grid, 25_000, 0xD1B, &c).unwrap();
    let large = qsd::estimate_lambda_survival(&p, 2, 0.25, &grid, 50_000, 0xD1C, &c).unwrap();
    let ratio = (small.ci_high - small.ci_low) / (large.ci_high - large.ci_low);
    let expected = 2.0f64.sqrt();
    assert!(
        ratio > expected / 1.5 && ratio < expected * 1.5,
        "CI width ratio {ratio} vs sqrt 2"
    );
}

#[test]
fn conditioned_substrate_stays_in_the_invariant_set() {
    let p = linear();
    let c = cfg();
    let per_time = qsd::states_at_times(&p, 2, 0.25, &[1.0, 3.0, 6.0], 20_000, 0xD1D, &c).unwrap();
    for states in &per_time {
        for st in states.iter().filter(|st| st.x > 0) {
            assert!(st.s > 0.0 && st.s < p.s_bar_1() + 1e-8, "survivor substrate {} outside (0, s_bar_1)", st.s);
        }
    }
}

#[test]
fn identical_initial_conditions_give_null_level_tv() {
    let p = linear();
    let c = cfg();
    let t = [2.0];
    let a = qsd::states_at_times(&p, 2, 0.25, &t, 20_000, 0xD1E, &c).unwrap().remove(0);
    let b = qsd::states_at_times(&p, 2, 0.25, &t, 20_000, 0xD1F, &c).unwrap().remove(0);
    let sa: Vec<(u64, f64)> = a.iter().filter(|st| st.x > 0).map(|st| (st.x, st.s)).collect();
    let sb: Vec<(u64, f64)> = b.iter().filter(|st| st.x > 0).map(|st| (st.x, st.s)).collect();
    let mut rng = simulate::RngStream::new(0xD20, 0).rng();
    let est = stats::bootstrap_tv_shared(&sa, &sb, 16, 200, &mut rng).unwrap();
    // split-half null of one ensemble sets the sampling-noise scale
    let half = sa.len() / 2;
    let null = stats::bootstrap_tv_shared(&sa[..half], &sa[half..], 16, 50, &mut rng).unwrap();
    let floor = null.tv / std::f64::consts::SQRT_2;
    assert!(
        est.tv <= floor + 3.0 * (est.se * est.se + null.se * null.se).sqrt(),
        "identical-IC TV {:.4} vs noise floor {floor:.4}",
        est.tv
    );
}

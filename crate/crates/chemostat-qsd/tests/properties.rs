//! Property tests for the structural invariants of the flow inverses, the
//! total-variation distance and the first-event split identity.

use chemostat_qsd::bounds::{self, BirthDeathSpec};
use chemostat_qsd::flow::{self, FlowSolverConfig, TimeToReach};
use chemostat_qsd::model::{ChemostatParams, GrowthLaw};
use chemostat_qsd::stats::{Histogram2d, HistogramSpec};
use proptest::prelude::*;

fn linear() -> ChemostatParams {
    ChemostatParams::new(1.0, 2.0, 1.0, GrowthLaw::Linear { c: 3.0 }).unwrap()
}

fn monod() -> ChemostatParams {
    ChemostatParams::new(1.0, 2.0, 1.0, GrowthLaw::Monod { m: 5.0, half_saturation: 1.0 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn initial_condition_inverse_round_trips(
        ell in 1u64..6,
        s0 in 0.02f64..1.8,
        t in 0.01f64..1.5,
        use_monod in any::<bool>(),
    ) {
        let params = if use_monod { monod() } else { linear() };
        let cfg = FlowSolverConfig::default();
        let s_bar = flow::equilibrium(&params, ell, &cfg).unwrap();
        let landed = flow::flow(&params, ell, s0, t, &cfg).unwrap();
        // skip targets that have saturated onto the equilibrium
        prop_assume!((landed - s_bar).abs() > 1e-6);
        let back = flow::initial_for(&params, ell, landed, t, &cfg).unwrap();
        prop_assert!((back - s0).abs() < 1e-8, "{back} vs {s0}");
    }

    #[test]
    fn time_inverse_recovers_the_horizon(
        ell in 1u64..6,
        s0 in 0.02f64..1.8,
        t in 0.01f64..1.5,
        use_monod in any::<bool>(),
    ) {
        let params = if use_monod { monod() } else { linear() };
        let cfg = FlowSolverConfig::default();
        let s_bar = flow::equilibrium(&params, ell, &cfg).unwrap();
        prop_assume!((s0 - s_bar).abs() > 1e-3);
        let landed = flow::flow(&params, ell, s0, t, &cfg).unwrap();
        prop_assume!((landed - s_bar).abs() > 1e-6);
        match flow::time_to_reach(&params, ell, s0, landed, &cfg).unwrap() {
            TimeToReach::Finite(tt) => prop_assert!((tt - t).abs() < 1e-7, "{tt} vs {t}"),
            TimeToReach::Unreachable { .. } => prop_assert!(false, "own forward value must be reachable"),
        }
    }

    #[test]
    fn total_variation_is_a_symmetric_pseudometric(
        xs_a in prop::collection::vec((1u64..6, 0.0f64..0.5), 20..200),
        xs_b in prop::collection::vec((1u64..6, 0.0f64..0.5), 20..200),
    ) {
        let spec = HistogramSpec::new(5, 0.0, 0.5, 8).unwrap();
        let a = Histogram2d::from_samples(spec, &xs_a).unwrap();
        let b = Histogram2d::from_samples(spec, &xs_b).unwrap();
        let ab = a.total_variation(&b).unwrap();
        let ba = b.total_variation(&a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-14);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(a.total_variation(&a).unwrap() == 0.0);
    }

    #[test]
    fn first_event_split_identity_holds(
        birth in 0.1f64..4.0,
        death in 0.1f64..4.0,
        n in 1u64..8,
        t in 0.01f64..3.0,
    ) {
        let spec = BirthDeathSpec { birth, death, n };
        let lhs = bounds::p_death(&spec, 1, t).unwrap() + bounds::p_birth(&spec, 1, t).unwrap();
        let rhs = 1.0 - (-(birth + death) * n as f64 * t).exp();
        prop_assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}

use arw_core::{Config, InstructionArray, Interval, ModelParams};
use arw_stabilize::{nml_report, stabilize, StabilizationReport, StabilizeRequest, Strategy};
use proptest::prelude::*;
use proptest::strategy::Strategy as Gen;

fn segment_config(n: u64, counts: &[u32]) -> Config {
    let v = Interval::segment(n);
    Config::from_counts(v, v.lo, counts).unwrap()
}

fn run(eta: &Config, n: u64, p: &ModelParams, seed: u64, strategy: Strategy) -> StabilizationReport {
    let req = StabilizeRequest::new(eta.clone(), Interval::segment(n)).strategy(strategy);
    let mut a = InstructionArray::new(p, seed);
    let r = stabilize(&req, &mut a).unwrap();
    assert!(!r.truncated);
    r
}

fn instance() -> impl Gen<Value = (u64, Vec<u32>)> {
    (1u64..24).prop_flat_map(|n| (Just(n), prop::collection::vec(0u32..3, n as usize)))
}

fn params() -> impl Gen<Value = ModelParams> {
    (0.2f64..3.0, 0.2f64..0.8).prop_map(|(l, p)| ModelParams::new(l, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn every_strategy_reaches_the_same_result((n, counts) in instance(), p in params(), seed in any::<u64>(), rs in any::<u64>()) {
        let eta = segment_config(n, &counts);
        let base = run(&eta, n, &p, seed, Strategy::QueueOrder);
        for s in [Strategy::LeftmostActive, Strategy::RightmostActive, Strategy::ClosestToOrigin, Strategy::SeededRandomActive(rs)] {
            let r = run(&eta, n, &p, seed, s);
            prop_assert_eq!(&r.final_config, &base.final_config);
            prop_assert_eq!(&r.odometer, &base.odometer);
            prop_assert_eq!(r.exits_total, base.exits_total);
        }
    }

    #[test]
    fn stabilization_conserves_and_stabilizes((n, counts) in instance(), p in params(), seed in any::<u64>()) {
        let eta = segment_config(n, &counts);
        let v = Interval::segment(n);
        let r = run(&eta, n, &p, seed, Strategy::LeftmostActive);
        prop_assert!(r.final_config.is_stable_in(v));
        prop_assert_eq!(r.final_config.total_particles() + r.exits_total, eta.total_particles());
        prop_assert_eq!(r.exits_left + r.exits_right, r.exits_total);
        prop_assert_eq!(r.odometer.total(), r.topplings);
    }

    /// Adding particles on the same array can only increase the odometer
    /// and the number of exits.
    #[test]
    fn more_particles_topple_more(
        (n, counts) in instance(),
        extra in prop::collection::vec(0u32..3, 24),
        p in params(),
        seed in any::<u64>(),
    ) {
        let small = segment_config(n, &counts);
        let big_counts: Vec<u32> = counts.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let big = segment_config(n, &big_counts);
        let a = run(&small, n, &p, seed, Strategy::QueueOrder);
        let b = run(&big, n, &p, seed, Strategy::QueueOrder);
        prop_assert!(a.odometer.le(&b.odometer));
        prop_assert!(a.exits_total <= b.exits_total);
    }

    /// Jump-only strips end empty and no particle is lost.
    #[test]
    fn strips_end_empty((n, counts) in instance(), left in 0u64..6, right in 0u64..6, seed in any::<u64>()) {
        let p = ModelParams::symmetric(1.0).unwrap();
        let eta = segment_config(n, &counts);
        let v = Interval::segment(n);
        let w = v.widen(left, right);
        let r = nml_report(&eta, n, w, &p, seed, 10_000_000).unwrap();
        prop_assert!(r.final_config.is_empty_in(Interval::new(w.lo, v.lo - 1)));
        prop_assert!(r.final_config.is_empty_in(Interval::new(v.hi + 1, w.hi)));
        prop_assert!(r.final_config.is_stable_in(v));
        prop_assert_eq!(r.final_config.total_particles() + r.exits_total, eta.total_particles());
    }
}

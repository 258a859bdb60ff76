use arw_core::{topple, Config, Instruction, InstructionArray, Interval, ModelParams, SiteContent, ToppleMode, ToppleOutcome};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (0.05f64..5.0, 0.0f64..=1.0).prop_map(|(l, p)| ModelParams::new(l, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Particles are never created or destroyed: those in the window plus
    /// those killed stay constant under any sequence of acceptable topplings.
    #[test]
    fn toppling_conserves_particles(
        counts in prop::collection::vec(0u32..4, 1..12),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..200),
        p in params(),
        seed in any::<u64>(),
    ) {
        let kill = Interval::new(0, counts.len() as i64 - 1);
        let mut c = Config::from_counts(kill, 0, &counts).unwrap();
        let mut a = InstructionArray::new(&p, seed);
        let total = c.total_particles();
        for pick in picks {
            let occupied: Vec<i64> = kill.iter().filter(|&x| c.get(x).count() > 0).collect();
            if occupied.is_empty() {
                break;
            }
            let x = occupied[pick.index(occupied.len())];
            let before = c.get(x);
            let (instr, outcome) = topple(&mut c, &mut a, x, ToppleMode::Acceptable, kill).unwrap();
            match outcome {
                ToppleOutcome::Slept => prop_assert_eq!(before.count(), 1),
                ToppleOutcome::SleepIgnored => prop_assert!(before.count() >= 2),
                ToppleOutcome::Moved { to } => prop_assert_eq!(to, x + instr.step()),
                ToppleOutcome::Killed { .. } => prop_assert!(!kill.contains(x + instr.step())),
            }
            prop_assert_eq!(c.total_particles() + c.killed, total);
        }
    }

    /// The array is a function of (seed, site, index): reading in a
    /// different order yields the same stacks.
    #[test]
    fn stacks_do_not_depend_on_read_order(
        sites in prop::collection::vec(-50i64..50, 1..100),
        p in params(),
        seed in any::<u64>(),
    ) {
        let mut forward = InstructionArray::new(&p, seed);
        let a: Vec<Instruction> = sites.iter().map(|&x| forward.next_instruction(x).unwrap()).collect();
        let mut backward = InstructionArray::new(&p, seed);
        let mut b: Vec<Instruction> = sites.iter().rev().map(|&x| backward.next_instruction(x).unwrap()).collect();
        // the i-th read at a site gets the i-th instruction in either order,
        // so per-site sequences must agree
        b.reverse();
        for site in -50..50 {
            let fa: Vec<_> = sites.iter().zip(&a).filter(|(&x, _)| x == site).map(|(_, i)| *i).collect();
            let mut fb: Vec<_> = sites.iter().zip(&b).filter(|(&x, _)| x == site).map(|(_, i)| *i).collect();
            fb.reverse();
            prop_assert_eq!(fa, fb);
        }
    }

    /// Stability is decided site by site: empty or one sleeper.
    #[test]
    fn stability_is_sitewise(counts in prop::collection::vec(0u32..3, 1..20), asleep in any::<bool>()) {
        let w = Interval::new(0, counts.len() as i64 - 1);
        let mut c = Config::empty(w);
        for (i, &k) in counts.iter().enumerate() {
            let s = match (k, asleep) {
                (0, _) => SiteContent::Empty,
                (1, true) => SiteContent::Sleeping,
                (k, _) => SiteContent::active(k),
            };
            c.set(i as i64, s).unwrap();
        }
        let stable = counts.iter().all(|&k| k == 0 || (k == 1 && asleep));
        prop_assert_eq!(c.is_stable_in(w), stable);
    }
}

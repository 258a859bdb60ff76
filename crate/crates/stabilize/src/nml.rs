//! Stabilization with a no man's land: jump-only strips around `V_n` that
//! must end empty.

use std::collections::BTreeSet;

use arw_core::{topple, Config, Error, InstructionArray, Interval, ModelParams, Odometer, Result, SiteContent};
use arw_core::{ToppleMode, ToppleOutcome};

use crate::{check_support, stabilize, StabilizationReport, StabilizeRequest};

/// The strips `W \ V` on each side (possibly empty).
pub fn strips(v: Interval, w: Interval) -> (Interval, Interval) {
    (Interval::new(w.lo, v.lo - 1), Interval::new(v.hi + 1, w.hi))
}

fn check_w(v: Interval, w: Interval) -> Result<()> {
    if w.contains_interval(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("W = {w} does not contain V = {v}")))
    }
}

/// Legal stabilization of `eta` in `V_n` with jump-only strips filling
/// `W \ V_n`; `exits_total` of the report is `M_n^W`.
pub fn nml_report(
    eta: &Config,
    n: u64,
    w: Interval,
    params: &ModelParams,
    seed: u64,
    budget: u64,
) -> Result<StabilizationReport> {
    let v = Interval::segment(n);
    check_support(eta, v)?;
    check_w(v, w)?;
    let (left, right) = strips(v, w);
    let req = StabilizeRequest::new(eta.clone(), v)
        .kill_region(w)
        .no_sleep(left)
        .no_sleep(right)
        .budget(budget);
    let mut array = InstructionArray::new(params, seed);
    let report = stabilize(&req, &mut array)?;
    if report.truncated {
        return Err(Error::BudgetExhausted { budget });
    }
    Ok(report)
}

/// Result of the escorted procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct EscortReport {
    /// Particles that left `W`.
    pub exits: u64,
    pub odometer: Odometer,
    pub topplings: u64,
    /// Number of escorted particles.
    pub escorts: u64,
    pub final_config: Config,
}

/// Both counts computed on one instruction array.
#[derive(Debug, Clone, PartialEq)]
pub struct NmlOutcome {
    /// Legal stabilization; its `exits_total` is `M_n^W`.
    pub legal: StabilizationReport,
    /// The escorted procedure, whose exit count dominates `M_n^W` on every
    /// array.
    pub escorted: EscortReport,
}

impl NmlOutcome {
    pub fn exits(&self) -> u64 {
        self.legal.exits_total
    }
}

/// `M_n^W` together with the escorted procedure on the same array.
pub fn stabilize_with_nml(
    eta: &Config,
    n: u64,
    w: Interval,
    params: &ModelParams,
    seed: u64,
    budget: u64,
) -> Result<NmlOutcome> {
    let legal = nml_report(eta, n, w, params, seed, budget)?;
    let escorted = escorted_stabilization(eta, n, w, params, seed, budget, |_| Ok(()))?;
    Ok(NmlOutcome { legal, escorted })
}

/// The escorted procedure.
///
/// With a strip on the left only: repeatedly topple the leftmost active
/// site of `V_n`; whenever a particle jumps into the strip, walk it by
/// acceptable topplings of its current site until it leaves `W`. A strip
/// on the right only is the mirror image. With strips on both sides the
/// inner region is `V_n` plus the left strip, the rightmost active site is
/// toppled, and particles crossing into the right strip are escorted.
///
/// `observe` sees the configuration after every toppling chosen by the
/// first rule (not during escorts).
pub fn escorted_stabilization<F>(
    eta: &Config,
    n: u64,
    w: Interval,
    params: &ModelParams,
    seed: u64,
    budget: u64,
    mut observe: F,
) -> Result<EscortReport>
where
    F: FnMut(&Config) -> Result<()>,
{
    let v = Interval::segment(n);
    check_support(eta, v)?;
    check_w(v, w)?;
    let (left, right) = strips(v, w);
    let (inner, leftmost) = match (left.is_empty(), right.is_empty()) {
        (_, true) => (v, true),
        (true, false) => (v, false),
        (false, false) => (Interval::new(w.lo, v.hi), false),
    };

    let mut array = InstructionArray::new(params, seed);
    array.set_jump_only(left)?;
    array.set_jump_only(right)?;
    let mut config = eta.rewindow(w)?;

    let unstable = |c: &Config, x: i64| {
        let s = c.get(x);
        if v.contains(x) {
            s.is_active()
        } else {
            s != SiteContent::Empty
        }
    };
    let mut active: BTreeSet<i64> = inner.iter().filter(|&x| unstable(&config, x)).collect();
    let mut topplings = 0u64;
    let mut escorts = 0u64;
    let mut odometer = Odometer::new();
    let mut spend = |x: i64, topplings: &mut u64| {
        odometer.increment(x);
        *topplings += 1;
        if *topplings > budget {
            Err(Error::BudgetExhausted { budget })
        } else {
            Ok(())
        }
    };

    loop {
        let next = if leftmost { active.first() } else { active.last() };
        let Some(&x) = next else { break };
        spend(x, &mut topplings)?;
        let (_, outcome) = topple(&mut config, &mut array, x, ToppleMode::Legal, w)?;
        if !unstable(&config, x) {
            active.remove(&x);
        }
        if let ToppleOutcome::Moved { to } = outcome {
            if inner.contains(to) {
                if unstable(&config, to) {
                    active.insert(to);
                }
            } else {
                // the particle crossed into the escort strip
                escorts += 1;
                let mut cur = to;
                loop {
                    let dest = cur + array.upcoming(cur)?.step();
                    if dest != cur && config.get(dest) == SiteContent::Sleeping {
                        return Err(Error::InvariantViolated {
                            item: "escort",
                            detail: format!("escorted particle about to wake a sleeper at {dest}"),
                        });
                    }
                    spend(cur, &mut topplings)?;
                    match topple(&mut config, &mut array, cur, ToppleMode::Acceptable, w)?.1 {
                        ToppleOutcome::Moved { to } => cur = to,
                        ToppleOutcome::Killed { .. } => break,
                        // a sleep on the escorted particle is undone by the
                        // next acceptable toppling
                        ToppleOutcome::Slept | ToppleOutcome::SleepIgnored => {}
                    }
                }
            }
        }
        observe(&config)?;
    }
    Ok(EscortReport {
        exits: config.killed - eta.killed,
        odometer,
        topplings,
        escorts,
        final_config: config,
    })
}

/// No site of `region` is active while a site to its right is asleep.
pub fn sleepers_left_of_active(config: &Config, region: Interval) -> bool {
    let mut seen_active = false;
    for x in region.iter() {
        match config.get(x) {
            SiteContent::Active(_) => seen_active = true,
            SiteContent::Sleeping if seen_active => return false,
            _ => {}
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{exit_count_report, DEFAULT_BUDGET};

    fn p1() -> ModelParams {
        ModelParams::symmetric(1.0).unwrap()
    }

    fn flat(n: u64, k: u32) -> Config {
        let v = Interval::segment(n);
        Config::from_counts(v, v.lo, &vec![k; n as usize]).unwrap()
    }

    #[test]
    fn empty_strips_reduce_to_exit_count() {
        let eta = flat(15, 2);
        let v = Interval::segment(15);
        for seed in 0..20 {
            let a = nml_report(&eta, 15, v, &p1(), seed, DEFAULT_BUDGET).unwrap();
            let b = exit_count_report(&eta, 15, &p1(), seed, DEFAULT_BUDGET).unwrap();
            assert_eq!(a, b);
            let e = escorted_stabilization(&eta, 15, v, &p1(), seed, DEFAULT_BUDGET, |_| Ok(())).unwrap();
            assert_eq!(e.exits, b.exits_total);
            assert_eq!(e.odometer, b.odometer);
            assert_eq!(e.escorts, 0);
        }
    }

    #[test]
    fn escorted_count_dominates_on_every_array() {
        let eta = flat(12, 2);
        let v = Interval::segment(12);
        for w in [v.widen(4, 0), v.widen(0, 4), v.widen(3, 5)] {
            for seed in 0..40 {
                let out = stabilize_with_nml(&eta, 12, w, &p1(), seed, DEFAULT_BUDGET).unwrap();
                assert!(out.escorted.exits >= out.legal.exits_total);
                assert!(out.legal.odometer.le(&out.escorted.odometer));
                let (l, r) = strips(v, w);
                assert!(out.legal.final_config.is_empty_in(l));
                assert!(out.legal.final_config.is_empty_in(r));
                assert!(out.escorted.final_config.is_empty_in(l));
                assert!(out.escorted.final_config.is_empty_in(r));
                assert!(out.escorted.final_config.is_stable_in(v));
            }
        }
    }

    #[test]
    fn leftmost_rule_keeps_sleepers_on_the_left() {
        let eta = flat(16, 2);
        let v = Interval::segment(16);
        for seed in 0..20 {
            escorted_stabilization(&eta, 16, v.widen(6, 0), &p1(), seed, DEFAULT_BUDGET, |c| {
                if sleepers_left_of_active(c, v) {
                    Ok(())
                } else {
                    Err(Error::InvariantViolated {
                        item: "leftmost",
                        detail: format!("{c:?}"),
                    })
                }
            })
            .unwrap();
        }
    }

    #[test]
    fn w_must_contain_v() {
        let eta = flat(4, 1);
        assert!(nml_report(&eta, 4, Interval::new(0, 10), &p1(), 0, 10).is_err());
    }
}

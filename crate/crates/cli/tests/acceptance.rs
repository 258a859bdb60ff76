//! Acceptance criteria 1 to 10. Prints one line per criterion and exits
//! nonzero if any fails.
//!
//! Every suite runs twice with the same master seed, first on a pool of
//! several workers and then on one. Criterion 10 compares the CSV bytes of
//! the two passes; the runtime limits apply to the first pass.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use arw_core::seed::{derive, unit_f64};
use arw_core::{Config, InstructionArray, Interval, ModelParams, Result};
use arw_coupling::{
    coupling_summary_table, coupling_trace_table, estimate_good_probability, run_coupling_batch,
    tau_prime_marginal_stats, BlockSpec, CouplingOptions,
};
use arw_experiments::output::{self, s, Table};
use arw_experiments::{
    check_critical_decay, decay_trend, estimate_zeta_c, evaluate_explicit, evaluate_no_exit, map_trials,
    nml_dominance, run_exit_stats, sample_exit_events, spread_check, theorem_generators, with_threads,
    InitialSpec, TrialPlan,
};
use arw_stabilize::{stabilize, StabilizationReport, StabilizeRequest, Strategy, DEFAULT_BUDGET};

const SEED: u64 = 20_240_917;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

struct Outcome {
    verdicts: Vec<Verdict>,
    /// (suite, CSV payload) pairs, compared across passes.
    payloads: Vec<(String, String)>,
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn sym() -> ModelParams {
    ModelParams::symmetric(1.0).unwrap()
}

fn csv(payloads: &mut Vec<(String, String)>, name: &str, t: &Table) -> Result<()> {
    payloads.push((name.to_string(), t.to_csv()?));
    Ok(())
}

/// Random instance `i`: size at most 50, up to 3 particles per site.
fn instance(i: u64) -> (u64, Vec<u32>, u64) {
    let base = derive(SEED, 0xacce, i);
    let n = 1 + (unit_f64(derive(base, 0, 0)) * 50.0) as u64;
    let counts = (0..n).map(|x| (unit_f64(derive(base, 1, x)) * 4.0) as u32).collect();
    (n, counts, derive(base, 2, 0))
}

fn run(eta: &Config, n: u64, seed: u64, strategy: Strategy) -> Result<StabilizationReport> {
    let req = StabilizeRequest::new(eta.clone(), Interval::segment(n)).strategy(strategy);
    stabilize(&req, &mut InstructionArray::new(&sym(), seed))
}

fn segment(n: u64, counts: &[u32]) -> Config {
    let v = Interval::segment(n);
    Config::from_counts(v, v.lo, counts).unwrap()
}

fn suites() -> Result<Outcome> {
    let mut verdicts = Vec::new();
    let mut payloads = Vec::new();
    let p = sym();

    // 1. single particle on one site
    let t = Instant::now();
    let plan = TrialPlan::new(p, InitialSpec::single(), 1, 100_000, SEED);
    let s1 = run_exit_stats(&plan)?;
    csv(&mut payloads, "1-exit-stats", &output::exit_stats_table(&s1))?;
    verdicts.push(Verdict {
        id: 1,
        name: "exact micro-oracle P(M_1 = 0) = 1/2",
        pass: s1.p_zero.contains(0.5),
        detail: format!("p_zero {:.5} in [{:.5}, {:.5}]", s1.p_zero.estimate, s1.p_zero.lo, s1.p_zero.hi),
        elapsed: t.elapsed(),
        limit: Duration::from_secs(5),
    });

    // 2. abelian property over strategies
    let t = Instant::now();
    let rows = map_trials(200, |i| -> Result<(u64, u64, u64, u64, bool)> {
        let (n, counts, seed) = instance(i);
        let eta = segment(n, &counts);
        let runs = [
            run(&eta, n, seed, Strategy::LeftmostActive)?,
            run(&eta, n, seed, Strategy::RightmostActive)?,
            run(&eta, n, seed, Strategy::SeededRandomActive(derive(seed, 3, 0)))?,
        ];
        let same = runs.iter().all(|r| {
            !r.truncated
                && r.final_config == runs[0].final_config
                && r.odometer == runs[0].odometer
                && r.exits_total == runs[0].exits_total
        });
        Ok((n, eta.total_particles(), runs[0].exits_total, runs[0].topplings, same))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut t2 = Table::new("abelian/1", &["instance", "n", "particles", "exits", "topplings", "identical"]);
    for (i, r) in rows.iter().enumerate() {
        t2.push(vec![s(i), s(r.0), s(r.1), s(r.2), s(r.3), s(r.4)]);
    }
    csv(&mut payloads, "2-abelian", &t2)?;
    let agree = rows.iter().filter(|r| r.4).count();
    verdicts.push(Verdict {
        id: 2,
        name: "abelian suite, 200 instances x 3 strategies",
        pass: agree == 200,
        detail: format!("{agree}/200 identical"),
        elapsed: t.elapsed(),
        limit: minutes(1),
    });

    // 3. monotonicity on shared arrays
    let t = Instant::now();
    let rows = map_trials(200, |i| -> Result<(u64, u64, u64, bool)> {
        let (n, counts, seed) = instance(i);
        let base = derive(SEED, 0x3030, i);
        let smaller: Vec<u32> = counts
            .iter()
            .enumerate()
            .map(|(x, &c)| c - (unit_f64(derive(base, 0, x as u64)) * (c + 1) as f64) as u32)
            .collect();
        let big = run(&segment(n, &counts), n, seed, Strategy::QueueOrder)?;
        let small = run(&segment(n, &smaller), n, seed, Strategy::QueueOrder)?;
        let ok = !big.truncated && !small.truncated && small.odometer.le(&big.odometer) && small.exits_total <= big.exits_total;
        Ok((n, small.exits_total, big.exits_total, ok))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut t3 = Table::new("monotonicity/1", &["instance", "n", "exits_smaller", "exits_larger", "monotone"]);
    for (i, r) in rows.iter().enumerate() {
        t3.push(vec![s(i), s(r.0), s(r.1), s(r.2), s(r.3)]);
    }
    csv(&mut payloads, "3-monotonicity", &t3)?;
    let mono = rows.iter().filter(|r| r.3).count();
    verdicts.push(Verdict {
        id: 3,
        name: "monotonicity suite, 200 nested pairs",
        pass: mono == 200,
        detail: format!("{mono}/200 monotone in odometer and exits"),
        elapsed: t.elapsed(),
        limit: minutes(1),
    });

    // 4. no man's land dominance
    let t = Instant::now();
    let n = 50;
    let w = Interval::segment(n).widen(10, 10);
    let d = nml_dominance(&p, &InitialSpec::Deterministic(vec![2; 50]), n, w, 10_000, 100, 0.01, SEED, DEFAULT_BUDGET)?;
    csv(&mut payloads, "4-dominance", &output::dominance_table(&d))?;
    verdicts.push(Verdict {
        id: 4,
        name: "M_n dominates M_n^W (n = 50, strips of 10)",
        pass: d.verdict.pass && d.escort_violations == 0,
        detail: format!(
            "one-sided stat {:.4} <= {:.4}; means {:.2} vs {:.2}; escort violations {}",
            d.verdict.one_sided_stat, d.verdict.threshold, d.mean_mn.mean, d.mean_mn_w.mean, d.escort_violations
        ),
        elapsed: t.elapsed(),
        limit: minutes(5),
    });

    // 5. block coupling
    let t = Instant::now();
    let spec = BlockSpec::new(5, vec![1; 5], 20, 0.2);
    let background = estimate_good_probability(&spec, &p, 20_000, SEED)?;
    let p_hat = estimate_good_probability(&spec, &p, 20_000, SEED + 1)?;
    let batch = run_coupling_batch(&spec, &p, 1000, SEED, &CouplingOptions::new(background.estimate))?;
    let sum = batch.summary();
    let tau = tau_prime_marginal_stats(&batch.traces, p_hat)?;
    csv(&mut payloads, "5-coupling-summary", &coupling_summary_table(&batch, Some(&tau)))?;
    csv(&mut payloads, "5-coupling-traces", &coupling_trace_table(&batch))?;
    verdicts.push(Verdict {
        id: 5,
        name: "block coupling (n = 5, K = 20, q = 0.2, 1000 traces)",
        pass: sum.implication_violations == 0
            && sum.invariant_violations == 0
            && sum.jump_bound_violations == 0
            && tau.direction_violations == 0
            && tau.consistent_at(0.01),
        detail: format!(
            "{} completed, {} aborted; implication/invariant/jump violations {}/{}/{}; \
             coarse sleep frequency {:.4} vs p {:.4} [{:.4}, {:.4}] (inside: {}), p-value {:.3}",
            sum.completed,
            sum.aborted,
            sum.implication_violations,
            sum.invariant_violations,
            sum.jump_bound_violations,
            tau.frequency.estimate,
            tau.p_hat.estimate,
            tau.p_hat.lo,
            tau.p_hat.hi,
            tau.p_hat.contains(tau.frequency.estimate),
            tau.test.p_value
        ),
        elapsed: t.elapsed(),
        limit: minutes(10),
    });

    // 6 and 7 share one early-stopped sample per generator
    let t = Instant::now();
    let zc = estimate_zeta_c(&p, 200, 400, 0.05, SEED, DEFAULT_BUDGET)?;
    let zeta = 2.0 * zc.hi;
    let events = theorem_generators(zeta)
        .iter()
        .map(|g| sample_exit_events(&p, g, 200, 0, 10_000, SEED, DEFAULT_BUDGET))
        .collect::<Result<Vec<_>>>()?;
    let shared = t.elapsed();
    csv(&mut payloads, "6-zeta-c", &output::zeta_c_table(&zc))?;
    csv(&mut payloads, "6-zeta-c-probes", &output::zeta_probe_table(&zc))?;
    let no_exit = evaluate_no_exit(&events, zeta, zc.hi);
    csv(&mut payloads, "6-no-exit", &output::theorem_table("no-exit", &no_exit))?;
    let wst = &no_exit.generators[no_exit.worst];
    verdicts.push(Verdict {
        id: 6,
        name: "P(M_n = 0) <= zeta_c/zeta at zeta = 2 hi",
        pass: no_exit.pass,
        detail: format!(
            "zeta_c in [{}, {}]; worst {}: {:.4} (lo {:.4}) vs bound {:.4}",
            zc.lo, zc.hi, wst.initial, wst.estimate.estimate, wst.estimate.lo, no_exit.bound
        ),
        elapsed: shared,
        limit: minutes(15),
    });
    let explicit = evaluate_explicit(&events, &p, zeta, zc.hi, 0.0)?;
    csv(&mut payloads, "7-explicit", &output::theorem_table("explicit", &explicit))?;
    let wst = &explicit.generators[explicit.worst];
    verdicts.push(Verdict {
        id: 7,
        name: "P(M_n > 0) >= 1 - zeta_c/zeta at eps = 0",
        pass: explicit.pass,
        detail: format!(
            "worst {}: {:.4} (hi {:.4}) vs bound {:.4}",
            wst.initial, wst.estimate.estimate, wst.estimate.hi, explicit.bound
        ),
        elapsed: shared,
        limit: minutes(15),
    });

    // 8. decay at the critical estimate, with a supercritical control
    let t = Instant::now();
    let n_list = [50, 100, 200, 400];
    let decay = check_critical_decay(&p, zc.midpoint(), &n_list, 4000, SEED, DEFAULT_BUDGET)?;
    let control = decay_trend(&p, 2.0 * zc.hi, &n_list, 200, SEED, DEFAULT_BUDGET)?;
    csv(&mut payloads, "8-decay", &output::decay_table(&decay))?;
    csv(&mut payloads, "8-decay-control", &output::decay_table(&control))?;
    let trend = |d: &arw_experiments::DecayReport| {
        d.rows.iter().map(|r| format!("{:.3}", r.mean_mn_over_n.mean)).collect::<Vec<_>>().join(", ")
    };
    verdicts.push(Verdict {
        id: 8,
        name: "mean M_n/n non-increasing at the critical estimate",
        pass: decay.non_increasing && (control.level_positive || control.increasing),
        detail: format!(
            "zeta {:.4}: [{}]; control at {:.4}: [{}] level-positive {}",
            decay.zeta,
            trend(&decay),
            control.zeta,
            trend(&control),
            control.level_positive
        ),
        elapsed: t.elapsed(),
        limit: minutes(20),
    });

    // 9. spread inequality
    let t = Instant::now();
    let r = spread_check(&p, &InitialSpec::Deterministic(vec![1; 40]), 40, 3, 30, 10_000, SEED, DEFAULT_BUDGET)?;
    csv(&mut payloads, "9-spread", &output::spread_table(&r))?;
    verdicts.push(Verdict {
        id: 9,
        name: "P(M_{n+4l} = 0) >= P(M_n <= 3) NB(3, l) - 3 se",
        pass: r.pass,
        detail: format!(
            "{:.4} >= {:.4} x {:.4} = {:.4} (3 se {:.4})",
            r.p_enlarged_zero.estimate,
            r.p_small.estimate,
            r.nb_implemented,
            r.lower_bound,
            3.0 * r.combined_se
        ),
        elapsed: t.elapsed(),
        limit: minutes(10),
    });

    Ok(Outcome { verdicts, payloads })
}

fn main() -> ExitCode {
    let many = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).max(2);
    let first = match with_threads(many, suites).and_then(|r| r) {
        Ok(o) => o,
        Err(e) => {
            println!("acceptance: error in the first pass: {e}");
            return ExitCode::FAILURE;
        }
    };
    let second = with_threads(1, suites).and_then(|r| r);

    let mut failed = 0;
    for v in &first.verdicts {
        let in_time = v.elapsed <= v.limit;
        let ok = v.pass && in_time;
        failed += !ok as usize;
        println!(
            "criterion {:>2} {} {}: {} [{:.1} s{}]",
            v.id,
            if ok { "PASS" } else { "FAIL" },
            v.name,
            v.detail,
            v.elapsed.as_secs_f64(),
            if in_time { String::new() } else { format!(", over the {} s limit", v.limit.as_secs()) }
        );
    }
    let (ok, detail) = match &second {
        Ok(o) => {
            let differ: Vec<&str> = first
                .payloads
                .iter()
                .zip(&o.payloads)
                .filter(|(a, b)| a != b)
                .map(|(a, _)| a.0.as_str())
                .collect();
            let same_count = first.payloads.len() == o.payloads.len();
            (
                differ.is_empty() && same_count,
                if differ.is_empty() {
                    format!("{} CSV payloads identical with {many} workers and with 1", first.payloads.len())
                } else {
                    format!("payloads differ: {}", differ.join(", "))
                },
            )
        }
        Err(e) => (false, format!("second pass failed: {e}")),
    };
    failed += !ok as usize;
    println!("criterion 10 {} determinism across thread counts: {detail}", if ok { "PASS" } else { "FAIL" });
    for (name, text) in &first.payloads {
        println!("  {name}: sha256 {}", output::sha256_hex(text.as_bytes()));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}

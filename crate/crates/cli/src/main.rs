//! `arw`: run the Activated Random Walk experiments from the command line.
//!
//! Every command writes CSV tables and a JSON manifest into `--out`.
//! Exit status: 0 on success, 2 when a check fails, 1 on errors and 64 on
//! invalid usage.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use arw_core::{Error, Interval, ModelParams, Result};
use arw_coupling::{
    coupling_summary_table, coupling_trace_table, estimate_good_probability, run_coupling_batch,
    tau_prime_marginal_stats, BlockSpec, CouplingOptions,
};
use arw_experiments::output::{self, Table};
use arw_experiments::{
    array_seed, check_critical_decay, check_thm_explicit, check_thm_no_exit, decay_trend, estimate_zeta_c,
    hockey_stick_scan, initial_seed, nml_dominance, run_exit_stats, spread_check, with_threads, InitialSpec,
    TrialPlan,
};
use arw_stabilize::{stabilize, StabilizeRequest, Strategy, DEFAULT_BUDGET};

use manifest::{git_describe, unix_now, OutputFile, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "arw", version, about = "Activated random walk experiments on Z")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    /// Sleep rate.
    #[arg(long, global = true, default_value_t = 1.0)]
    lambda: f64,
    /// Probability that a jump goes right.
    #[arg(long = "p-right", global = true, default_value_t = 0.5)]
    p_right: f64,
    /// Master seed; fixes every output.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (0: one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Toppling budget per stabilization.
    #[arg(long, global = true, env = "ARW_BUDGET", default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "arw-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Stabilize one configuration and write the final state and odometer.
    Stabilize {
        #[arg(long)]
        n: u64,
        /// single, const:K, counts:C1,C2,.., flat:Z, point:Z, poisson:Z or dist:P0,P1,..
        #[arg(long, default_value = "single")]
        eta: String,
        /// queue, leftmost, rightmost, origin or random:SEED
        #[arg(long, default_value = "queue")]
        strategy: String,
        /// Width of the jump-only strip added on each side.
        #[arg(long, default_value_t = 0)]
        strip: u64,
    },
    /// Distribution of the number of exits M_n.
    ExitStats {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value = "single")]
        eta: String,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        /// Tail events are M_n > eps n.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Mean M_n / n over a grid of densities and sizes (i.i.d. Poisson starts).
    HockeyStick {
        #[arg(long, value_delimiter = ',', required = true)]
        zeta: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<u64>,
        #[arg(long, default_value_t = 200)]
        trials: u64,
    },
    /// Bracket the critical density by bisection.
    ZetaC {
        #[arg(long, default_value_t = 200)]
        n: u64,
        #[arg(long, default_value_t = 400)]
        trials: u64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Test that M_n dominates M_n^W, with jump-only strips around V_n.
    Dominance {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value = "const:2")]
        eta: String,
        #[arg(long, default_value_t = 10)]
        strip: u64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Trials also run through the escorted procedure.
        #[arg(long = "escort-trials", default_value_t = 100)]
        escort_trials: u64,
        /// Confidence parameter of the DKW bands.
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Compare P(M_{n+4 ell} = 0) with P(M_n <= k) times the trapping probability.
    Spread {
        #[arg(long, default_value_t = 40)]
        n: u64,
        #[arg(long, default_value = "const:1")]
        eta: String,
        #[arg(long, default_value_t = 3)]
        k: u64,
        #[arg(long, default_value_t = 30)]
        ell: u64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
    },
    /// Run the block coupling and check its invariants.
    Coupling {
        #[arg(long = "block-n", default_value_t = 5)]
        block_n: u64,
        #[arg(long, default_value = "const:1")]
        eta: String,
        /// Blocks -K..=K carry particles.
        #[arg(long = "K", default_value_t = 20)]
        k_max: u64,
        #[arg(long, default_value_t = 0.2)]
        q: f64,
        #[arg(long, default_value_t = 1000)]
        traces: u64,
        /// Trials for each estimate of P(M_n = 0).
        #[arg(long = "p-trials", default_value_t = 20_000)]
        p_trials: u64,
        /// Level of the test on the coarse sleep frequency.
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        /// Also write every trace as JSON lines.
        #[arg(long = "trace-out")]
        trace_out: bool,
    },
    /// Finite-size consistency checks of the bounds on exits.
    Check {
        #[arg(long, value_enum)]
        theorem: Theorem,
        /// Density; defaults to twice the critical estimate.
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long, default_value_t = 200)]
        n: u64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Critical density to check against; estimated when absent.
        #[arg(long = "zeta-c")]
        zeta_c: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Sizes for critical-decay.
        #[arg(long = "n-list", value_delimiter = ',', default_value = "50,100,200,400")]
        n_list: Vec<u64>,
        /// Trials per size of the negative control in critical-decay.
        #[arg(long = "control-trials", default_value_t = 400)]
        control_trials: u64,
        #[arg(long = "zc-n", default_value_t = 200)]
        zc_n: u64,
        #[arg(long = "zc-trials", default_value_t = 400)]
        zc_trials: u64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Theorem {
    NoExit,
    Explicit,
    CriticalDecay,
}

impl Command {
    /// Prefix of every file the command writes.
    fn name(&self) -> &'static str {
        match self {
            Command::Stabilize { .. } => "stabilize",
            Command::ExitStats { .. } => "exit-stats",
            Command::HockeyStick { .. } => "hockey-stick",
            Command::ZetaC { .. } => "zeta-c",
            Command::Dominance { .. } => "dominance",
            Command::Spread { .. } => "spread",
            Command::Coupling { .. } => "coupling",
            Command::Check { theorem: Theorem::NoExit, .. } => "check-no-exit",
            Command::Check { theorem: Theorem::Explicit, .. } => "check-explicit",
            Command::Check { theorem: Theorem::CriticalDecay, .. } => "check-critical-decay",
        }
    }
}

/// What a command produced, before anything is written.
#[derive(Default)]
struct Outcome {
    tables: Vec<(String, Table)>,
    /// Non-CSV files: name, format, contents.
    extra: Vec<(String, &'static str, String)>,
    excluded: u64,
    verdict: Option<bool>,
    notes: Vec<String>,
}

impl Outcome {
    fn table(&mut self, name: impl Into<String>, t: Table) {
        self.tables.push((name.into(), t));
    }
}

fn params(c: &Common) -> Result<ModelParams> {
    ModelParams::new(c.lambda, c.p_right)
}

fn parse_strategy(text: &str) -> Result<Strategy> {
    Ok(match text {
        "queue" => Strategy::QueueOrder,
        "leftmost" => Strategy::LeftmostActive,
        "rightmost" => Strategy::RightmostActive,
        "origin" => Strategy::ClosestToOrigin,
        _ => match text.strip_prefix("random:").map(str::parse) {
            Some(Ok(seed)) => Strategy::SeededRandomActive(seed),
            _ => return Err(Error::InvalidParams(format!("unknown strategy {text:?}"))),
        },
    })
}

fn execute(common: &Common, command: &Command) -> Result<Outcome> {
    let p = params(common)?;
    let (seed, budget) = (common.seed, common.budget);
    let mut out = Outcome::default();
    match command {
        Command::Stabilize { n, eta, strategy, strip } => {
            let spec = InitialSpec::parse(eta, *n)?;
            let initial = spec.sample(*n, initial_seed(seed, 0))?;
            let v = Interval::segment(*n);
            let w = v.widen(*strip, *strip);
            let req = StabilizeRequest::new(initial.rewindow(w)?, v)
                .kill_region(w)
                .no_sleep(Interval::new(w.lo, v.lo - 1))
                .no_sleep(Interval::new(v.hi + 1, w.hi))
                .strategy(parse_strategy(strategy)?)
                .budget(budget);
            let mut array = arw_core::InstructionArray::new(&p, array_seed(seed, 0));
            let r = stabilize(&req, &mut array)?;
            out.table("stabilize.csv", output::stabilize_table(&r.final_config, &r.odometer, w));
            let mut t = Table::new(
                "stabilize-summary/1",
                &["n", "strip", "initial", "exits", "exits_left", "exits_right", "topplings", "truncated"],
            );
            t.push(vec![
                output::s(n),
                output::s(strip),
                spec.describe(),
                output::s(r.exits_total),
                output::s(r.exits_left),
                output::s(r.exits_right),
                output::s(r.topplings),
                output::s(r.truncated),
            ]);
            out.table("stabilize-summary.csv", t);
            out.excluded = r.truncated as u64;
            out.notes.push(format!("M = {} ({} topplings)", r.exits_total, r.topplings));
            if r.truncated {
                return Err(Error::BudgetExhausted { budget });
            }
        }
        Command::ExitStats { n, eta, trials, eps } => {
            let plan = TrialPlan {
                epsilon: *eps,
                budget,
                ..TrialPlan::new(p, InitialSpec::parse(eta, *n)?, *n, *trials, seed)
            };
            let s = run_exit_stats(&plan)?;
            out.excluded = s.excluded_truncated;
            out.notes.push(format!(
                "mean M_n/n = {:.6} (se {:.2e}), p_zero = {:.6} [{:.6}, {:.6}]",
                s.mean_mn_over_n.mean, s.mean_mn_over_n.se, s.p_zero.estimate, s.p_zero.lo, s.p_zero.hi
            ));
            out.table("exit-stats.csv", output::exit_stats_table(&s));
            out.table("exit-stats-histogram.csv", output::histogram_table(&s));
        }
        Command::HockeyStick { zeta, n, trials } => {
            let scan = hockey_stick_scan(&p, zeta, n, *trials, seed, budget)?;
            out.excluded = scan.cells.iter().map(|c| c.excluded_truncated).sum();
            out.notes.push(format!("{} cells, pointwise violations {}", scan.cells.len(), scan.pointwise_violations));
            out.table("hockey-stick.csv", output::scan_table(&p, &scan));
        }
        Command::ZetaC { n, trials, tol } => {
            let b = estimate_zeta_c(&p, *n, *trials, *tol, seed, budget)?;
            out.excluded = b.excluded_truncated;
            out.notes.push(format!("zeta_c in [{}, {}]", b.lo, b.hi));
            out.table("zeta-c.csv", output::zeta_c_table(&b));
            out.table("zeta-c-probes.csv", output::zeta_probe_table(&b));
        }
        Command::Dominance { n, eta, strip, trials, escort_trials, alpha } => {
            let spec = InitialSpec::parse(eta, *n)?;
            let w = Interval::segment(*n).widen(*strip, *strip);
            let d = nml_dominance(&p, &spec, *n, w, *trials, *escort_trials, *alpha, seed, budget)?;
            out.excluded = d.excluded_truncated;
            out.verdict = Some(d.verdict.pass && d.escort_violations == 0);
            out.notes.push(format!(
                "stat {:.5} vs threshold {:.5}, escort violations {}",
                d.verdict.one_sided_stat, d.verdict.threshold, d.escort_violations
            ));
            out.table("dominance.csv", output::dominance_table(&d));
        }
        Command::Spread { n, eta, k, ell, trials } => {
            let spec = InitialSpec::parse(eta, *n)?;
            let r = spread_check(&p, &spec, *n, *k, *ell, *trials, seed, budget)?;
            out.excluded = r.excluded_truncated;
            out.verdict = Some(r.pass);
            out.notes.push(format!(
                "P(M_big = 0) = {:.5}, lower bound {:.5} (3 se = {:.5})",
                r.p_enlarged_zero.estimate,
                r.lower_bound,
                3.0 * r.combined_se
            ));
            out.table("spread.csv", output::spread_table(&r));
        }
        Command::Coupling { block_n, eta, k_max, q, traces, p_trials, alpha, trace_out } => {
            let eta = match InitialSpec::parse(eta, *block_n)? {
                InitialSpec::Deterministic(mut c) => {
                    c.resize(*block_n as usize, 0);
                    c
                }
                other => {
                    let cfg = other.sample(*block_n, initial_seed(seed, 0))?;
                    let v = Interval::segment(*block_n);
                    v.iter().map(|x| cfg.get(x).count()).collect()
                }
            };
            let spec = BlockSpec::new(*block_n, eta, *k_max, *q);
            let background = estimate_good_probability(&spec, &p, *p_trials, seed)?;
            let p_hat = estimate_good_probability(&spec, &p, *p_trials, seed.wrapping_add(1))?;
            let options = CouplingOptions {
                march_budget: budget.min(arw_coupling::DEFAULT_MARCH_BUDGET),
                ..CouplingOptions::new(background.estimate)
            };
            let batch = run_coupling_batch(&spec, &p, *traces, seed, &options)?;
            let summary = batch.summary();
            let tau = tau_prime_marginal_stats(&batch.traces, p_hat).ok();
            out.excluded = summary.aborted;
            out.verdict = Some(
                summary.invariant_violations == 0
                    && summary.implication_violations == 0
                    && summary.jump_bound_violations == 0
                    && tau.as_ref().is_none_or(|t| t.consistent_at(*alpha) && t.direction_violations == 0),
            );
            out.notes.push(format!(
                "{} traces, {} aborted, implication violations {}, invariant violations {}",
                summary.traces, summary.aborted, summary.implication_violations, summary.invariant_violations
            ));
            out.table("coupling-summary.csv", coupling_summary_table(&batch, tau.as_ref()));
            out.table("coupling-traces.csv", coupling_trace_table(&batch));
            if *trace_out {
                let text: String = batch.traces.iter().map(|t| t.to_json_lines()).collect();
                out.extra.push(("coupling-traces.jsonl".into(), "jsonl", text));
            }
        }
        Command::Check {
            theorem,
            zeta,
            n,
            trials,
            zeta_c,
            eps,
            n_list,
            control_trials,
            zc_n,
            zc_trials,
            tol,
        } => {
            // (upper estimate, point estimate)
            let (zc_hi, zc_mid) = match zeta_c {
                Some(z) => (*z, *z),
                None => {
                    let b = estimate_zeta_c(&p, *zc_n, *zc_trials, *tol, seed, budget)?;
                    out.notes.push(format!("zeta_c in [{}, {}]", b.lo, b.hi));
                    out.excluded += b.excluded_truncated;
                    out.table(format!("{}-zeta-c.csv", command.name()), output::zeta_c_table(&b));
                    out.table(format!("{}-zeta-c-probes.csv", command.name()), output::zeta_probe_table(&b));
                    (b.hi, b.midpoint())
                }
            };
            let zeta = zeta.unwrap_or(2.0 * zc_hi);
            match theorem {
                Theorem::NoExit | Theorem::Explicit => {
                    let c = if *theorem == Theorem::NoExit {
                        check_thm_no_exit(&p, zeta, *n, *trials, zc_hi, seed, budget)?
                    } else {
                        check_thm_explicit(&p, zeta, *n, *trials, zc_hi, *eps, seed, budget)?
                    };
                    out.excluded += c.generators.iter().map(|g| g.excluded_truncated).sum::<u64>();
                    out.verdict = Some(c.pass);
                    let w = &c.generators[c.worst];
                    out.notes.push(format!(
                        "worst generator {}: estimate {:.5} [{:.5}, {:.5}] vs bound {:.5}{}",
                        w.initial,
                        w.estimate.estimate,
                        w.estimate.lo,
                        w.estimate.hi,
                        c.bound,
                        if c.vacuous { " (vacuous)" } else { "" }
                    ));
                    let name = if *theorem == Theorem::NoExit { "no-exit" } else { "explicit" };
                    out.table(format!("{}.csv", command.name()), output::theorem_table(name, &c));
                }
                Theorem::CriticalDecay => {
                    let at = zeta_c.unwrap_or(zc_mid);
                    let d = check_critical_decay(&p, at, n_list, *trials, seed, budget)?;
                    let control = decay_trend(&p, 2.0 * zc_hi, n_list, *control_trials, seed, budget)?;
                    out.excluded += d.rows.iter().chain(&control.rows).map(|r| r.excluded_truncated).sum::<u64>();
                    let control_ok = control.level_positive || control.increasing;
                    out.verdict = Some(d.non_increasing && control_ok);
                    out.notes.push(format!(
                        "at {at}: non-increasing {}; control at {}: level-positive {}, increasing {}",
                        d.non_increasing,
                        2.0 * zc_hi,
                        control.level_positive,
                        control.increasing
                    ));
                    out.table("check-critical-decay.csv", output::decay_table(&d));
                    out.table("check-critical-decay-control.csv", output::decay_table(&control));
                }
            }
        }
    }
    Ok(out)
}

fn write_outputs(dir: &Path, outcome: &Outcome) -> Result<Vec<OutputFile>> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    fs::create_dir_all(dir).map_err(io)?;
    let mut files = Vec::new();
    let mut write = |name: &str, schema: String, text: &str| -> Result<()> {
        fs::write(dir.join(name), text).map_err(io)?;
        files.push(OutputFile {
            file: name.to_string(),
            schema,
            sha256: output::sha256_hex(text.as_bytes()),
            bytes: text.len() as u64,
        });
        Ok(())
    };
    for (name, t) in &outcome.tables {
        write(name, t.schema.to_string(), &t.to_csv()?)?;
    }
    for (name, format, text) in &outcome.extra {
        write(name, format.to_string(), text)?;
    }
    Ok(files)
}

fn run(cli: &Cli, argv: Vec<String>) -> Result<Option<bool>> {
    let started = unix_now();
    let common = cli.common.clone();
    let command = cli.command.clone();
    let outcome = with_threads(common.threads, || execute(&common, &command))??;
    let outputs = write_outputs(&common.out, &outcome)?;
    let manifest = RunManifest {
        tool: "arw",
        version: env!("CARGO_PKG_VERSION"),
        git_describe: git_describe(Path::new(".")),
        command_line: argv,
        command: cli.command.name().to_string(),
        params: serde_json::json!({ "common": &cli.common, "command": &cli.command }),
        master_seed: common.seed,
        threads: common.threads,
        budget: common.budget,
        started_unix: started,
        finished_unix: unix_now(),
        excluded_truncated: outcome.excluded,
        verdict: outcome.verdict,
        outputs,
    };
    let path = common.out.join(format!("{}.manifest.json", cli.command.name()));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::Io(e.to_string()))?;
    for note in &outcome.notes {
        println!("{note}");
    }
    if let Some(v) = outcome.verdict {
        println!("verdict: {}", if v { "pass" } else { "FAIL" });
    }
    println!("wrote {}", path.display());
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli, argv) {
        Ok(Some(false)) => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(Error::InvalidParams(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(64)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! Monte Carlo drivers and the finite-size checks built on them.
//!
//! Trial `t` of a run with master seed `m` draws its instruction array from
//! `derive(trial_seed(m, t), STREAM_ARRAY, 0)` and its initial configuration
//! from `derive(trial_seed(m, t), STREAM_INITIAL, 0)`. Trials are mapped in
//! parallel and collected in index order, so every output below is a
//! function of the inputs alone, whatever the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use arw_core::seed::{derive, mix, trial_seed, unit_f64, STREAM_ARRAY, STREAM_INITIAL};
use arw_core::{Config, Error, InstructionArray, Interval, ModelParams, Result};
use arw_stabilize::{
    check_support, escorted_stabilization, negative_binomial_cdf, nml_report, stabilize, trap_success_probability,
    two_step_spread, StabilizeRequest, DEFAULT_BUDGET,
};

pub mod output;
pub mod stats;

use stats::{dominance_test, mean_se, DominanceVerdict, MeanSe, Proportion};

/// How the initial configuration on `V_n` is produced. All particles start
/// active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSpec {
    /// Fixed counts, `counts[i]` particles at `V_n.lo + i`.
    Deterministic(Vec<u32>),
    /// `ceil(zeta n)` particles spread as evenly as possible.
    Flat { zeta: f64 },
    /// `ceil(zeta n)` particles at the origin.
    PointMass { zeta: f64 },
    /// I.i.d. Poisson counts. Counts for different means are coupled: with
    /// the same seed, a larger mean gives a pointwise larger configuration.
    IidPoisson { mean: f64 },
    /// I.i.d. counts with `P(k) = probs[k]`.
    IidDistribution { probs: Vec<f64> },
}

impl InitialSpec {
    /// One particle at the origin.
    pub fn single() -> Self {
        InitialSpec::Deterministic(vec![1])
    }

    pub fn is_random(&self) -> bool {
        matches!(self, InitialSpec::IidPoisson { .. } | InitialSpec::IidDistribution { .. })
    }

    /// Expected number of particles per site of `V_n`.
    pub fn density(&self, n: u64) -> f64 {
        match self {
            InitialSpec::Deterministic(c) => c.iter().map(|&k| k as f64).sum::<f64>() / n as f64,
            InitialSpec::Flat { zeta } | InitialSpec::PointMass { zeta } => {
                total_for(*zeta, n) as f64 / n as f64
            }
            InitialSpec::IidPoisson { mean } => *mean,
            InitialSpec::IidDistribution { probs } => {
                probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
            }
        }
    }

    pub fn validate(&self, n: u64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        match self {
            InitialSpec::Deterministic(c) if c.len() as u64 > n => {
                bad(format!("{} counts do not fit in V_{n}", c.len()))
            }
            InitialSpec::Flat { zeta } | InitialSpec::PointMass { zeta } | InitialSpec::IidPoisson { mean: zeta }
                if !(zeta.is_finite() && *zeta >= 0.0) =>
            {
                bad(format!("density must be finite and non-negative, got {zeta}"))
            }
            InitialSpec::IidDistribution { probs }
                if probs.is_empty()
                    || probs.iter().any(|p| !(0.0..=1.0).contains(p))
                    || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 =>
            {
                bad("distribution must be a probability vector".into())
            }
            _ => Ok(()),
        }
    }

    /// The configuration for one trial.
    pub fn sample(&self, n: u64, seed: u64) -> Result<Config> {
        let v = Interval::segment(n);
        let counts = match self {
            InitialSpec::Deterministic(c) => {
                return Config::from_counts(v, v.lo, c);
            }
            InitialSpec::Flat { zeta } => flat_counts(n, total_for(*zeta, n)),
            InitialSpec::PointMass { zeta } => {
                let mut c = vec![0u32; n as usize];
                c[(-v.lo) as usize] = total_for(*zeta, n) as u32;
                c
            }
            InitialSpec::IidPoisson { mean } => {
                (0..n).map(|i| poisson_by_arrivals(*mean, derive(seed, 0, i))).collect()
            }
            InitialSpec::IidDistribution { probs } => (0..n)
                .map(|i| {
                    let u = unit_f64(derive(seed, 1, i));
                    let mut acc = 0.0;
                    for (k, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return k as u32;
                        }
                    }
                    (probs.len() - 1) as u32
                })
                .collect(),
        };
        Config::from_counts(v, v.lo, &counts)
    }

    /// Parse the command-line form: `single`, `const:K`, `counts:C1,C2,..`,
    /// `flat:ZETA`, `point:ZETA`, `poisson:ZETA` or `dist:P0,P1,..`.
    /// `n` is needed for `const`.
    pub fn parse(text: &str, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("n must be at least 1".into()));
        }
        let bad = || Error::InvalidParams(format!("cannot parse initial configuration {text:?}"));
        let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
        let num = |a: &str| a.trim().parse::<f64>().map_err(|_| bad());
        let list = |a: &str| -> Result<Vec<f64>> { a.split(',').map(num).collect() };
        let spec = match kind {
            "single" if arg.is_empty() => {
                let mut c = vec![0u32; n as usize];
                let v = Interval::segment(n);
                *c.get_mut((-v.lo) as usize).ok_or_else(bad)? = 1;
                InitialSpec::Deterministic(c)
            }
            "const" => InitialSpec::Deterministic(vec![arg.trim().parse().map_err(|_| bad())?; n as usize]),
            "counts" => InitialSpec::Deterministic(
                arg.split(',').map(|c| c.trim().parse::<u32>().map_err(|_| bad())).collect::<Result<_>>()?,
            ),
            "flat" => InitialSpec::Flat { zeta: num(arg)? },
            "point" => InitialSpec::PointMass { zeta: num(arg)? },
            "poisson" => InitialSpec::IidPoisson { mean: num(arg)? },
            "dist" => InitialSpec::IidDistribution { probs: list(arg)? },
            _ => return Err(bad()),
        };
        spec.validate(n)?;
        Ok(spec)
    }

    pub fn describe(&self) -> String {
        match self {
            InitialSpec::Deterministic(c) => format!("deterministic({} particles)", c.iter().sum::<u32>()),
            InitialSpec::Flat { zeta } => format!("flat({zeta})"),
            InitialSpec::PointMass { zeta } => format!("point-mass({zeta})"),
            InitialSpec::IidPoisson { mean } => format!("iid-poisson({mean})"),
            InitialSpec::IidDistribution { probs } => format!("iid{probs:?}"),
        }
    }
}

/// `ceil(zeta n)`, guarding against `zeta n` landing a hair above an integer.
pub fn total_for(zeta: f64, n: u64) -> u64 {
    let x = zeta * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// `total` particles on `n` sites, site `i` getting
/// `floor((i+1) total / n) - floor(i total / n)`.
pub fn flat_counts(n: u64, total: u64) -> Vec<u32> {
    (0..n)
        .map(|i| ((i + 1) * total / n - i * total / n) as u32)
        .collect()
}

/// Number of arrivals before time `mean` of a unit-rate Poisson process
/// whose gaps come from the word stream `mix(seed + j)`.
fn poisson_by_arrivals(mean: f64, seed: u64) -> u32 {
    let mut t = 0.0;
    let mut k = 0u32;
    loop {
        let u = unit_f64(mix(seed.wrapping_add(k as u64)));
        t += -(1.0 - u).ln();
        if t > mean {
            return k;
        }
        k += 1;
    }
}

/// Run `f(t)` for `t in 0..trials` on the current rayon pool, in index order.
pub fn map_trials<T, F>(trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..trials).into_par_iter().map(f).collect()
}

/// Run `f` on a dedicated pool of `threads` workers (0 means rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn array_seed(master: u64, trial: u64) -> u64 {
    derive(trial_seed(master, trial), STREAM_ARRAY, 0)
}

pub fn initial_seed(master: u64, trial: u64) -> u64 {
    derive(trial_seed(master, trial), STREAM_INITIAL, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub params: ModelParams,
    pub initial: InitialSpec,
    pub n: u64,
    pub trials: u64,
    pub master_seed: u64,
    /// Tail events are `M_n > epsilon n`.
    pub epsilon: f64,
    pub budget: u64,
}

impl TrialPlan {
    pub fn new(params: ModelParams, initial: InitialSpec, n: u64, trials: u64, master_seed: u64) -> Self {
        TrialPlan {
            params,
            initial,
            n,
            trials,
            master_seed,
            epsilon: 0.0,
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.initial.validate(self.n)?;
        if self.n == 0 || self.trials == 0 {
            return Err(Error::InvalidParams("n and trials must be positive".into()));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::InvalidParams(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `M_n` of one trial, or `None` when the budget ran out.
pub fn exit_sample(plan: &TrialPlan, trial: u64) -> Result<Option<u64>> {
    let eta = plan.initial.sample(plan.n, initial_seed(plan.master_seed, trial))?;
    exit_sample_on(&eta, plan.n, &plan.params, array_seed(plan.master_seed, trial), plan.budget, None)
}

fn exit_sample_on(
    eta: &Config,
    n: u64,
    params: &ModelParams,
    seed: u64,
    budget: u64,
    stop: Option<u64>,
) -> Result<Option<u64>> {
    let v = Interval::segment(n);
    check_support(eta, v)?;
    let mut req = StabilizeRequest::new(eta.clone(), v).budget(budget);
    req.stop_after_exits = stop;
    let mut array = InstructionArray::new(params, seed);
    let r = stabilize(&req, &mut array)?;
    Ok(if r.truncated { None } else { Some(r.exits_total) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub n: u64,
    pub params: ModelParams,
    pub initial: String,
    pub density: f64,
    pub trials: u64,
    pub epsilon: f64,
    pub mean_mn_over_n: MeanSe,
    /// `P(M_n = 0)`.
    pub p_zero: Proportion,
    /// `P(M_n > epsilon n)`.
    pub p_tail: Proportion,
    /// `(value, count)` pairs of `M_n`, increasing in value.
    pub histogram: Vec<(u64, u64)>,
    pub excluded_truncated: u64,
    pub master_seed: u64,
}

/// Summarize completed samples of `M_n`.
pub fn summarize(plan: &TrialPlan, samples: &[Option<u64>]) -> Result<EmpiricalSummary> {
    let done: Vec<u64> = samples.iter().flatten().copied().collect();
    let excluded = samples.len() as u64 - done.len() as u64;
    if done.is_empty() {
        return Err(Error::AllTrialsTruncated { trials: samples.len() as u64 });
    }
    let n = plan.n as f64;
    let scaled: Vec<f64> = done.iter().map(|&m| m as f64 / n).collect();
    let mut hist = BTreeMap::new();
    for &m in &done {
        *hist.entry(m).or_insert(0u64) += 1;
    }
    let zeros = hist.get(&0).copied().unwrap_or(0);
    let tail = done.iter().filter(|&&m| m as f64 > plan.epsilon * n).count() as u64;
    Ok(EmpiricalSummary {
        n: plan.n,
        params: plan.params,
        initial: plan.initial.describe(),
        density: plan.initial.density(plan.n),
        trials: samples.len() as u64,
        epsilon: plan.epsilon,
        mean_mn_over_n: mean_se(&scaled),
        p_zero: Proportion::new(zeros, done.len() as u64),
        p_tail: Proportion::new(tail, done.len() as u64),
        histogram: hist.into_iter().collect(),
        excluded_truncated: excluded,
        master_seed: plan.master_seed,
    })
}

pub fn run_exit_stats(plan: &TrialPlan) -> Result<EmpiricalSummary> {
    plan.validate()?;
    let samples: Vec<Result<Option<u64>>> = map_trials(plan.trials, |t| exit_sample(plan, t));
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(plan, &samples)
}

// ---------------------------------------------------------------------------
// hockey-stick scan

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub zeta: f64,
    pub n: u64,
    pub mean_mn_over_n: MeanSe,
    pub completed: u64,
    pub excluded_truncated: u64,
    /// Set when every trial of the cell was truncated.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub cells: Vec<ScanCell>,
    /// For each `n`: whether the cell means are non-decreasing in `zeta`.
    pub monotone_means: Vec<(u64, bool)>,
    /// Trials in which `M_n` decreased between consecutive grid densities.
    /// Always 0: the configurations are nested and share arrays.
    pub pointwise_violations: u64,
}

/// Mean `M_n / n` over a grid of densities and sizes, with i.i.d. Poisson
/// starts. Within a trial, all densities share the instruction array and
/// use nested configurations.
pub fn hockey_stick_scan(
    params: &ModelParams,
    zeta_grid: &[f64],
    n_list: &[u64],
    trials: u64,
    seed: u64,
    budget: u64,
) -> Result<ScanReport> {
    if zeta_grid.is_empty() || n_list.is_empty() || trials == 0 {
        return Err(Error::InvalidParams("empty grid".into()));
    }
    let mut zetas = zeta_grid.to_vec();
    zetas.sort_by(f64::total_cmp);
    let mut cells = Vec::new();
    let mut monotone = Vec::new();
    let mut violations = 0u64;
    for &n in n_list {
        let per_trial: Vec<Result<Vec<Option<u64>>>> = map_trials(trials, |t| {
            zetas
                .iter()
                .map(|&z| {
                    let plan = TrialPlan {
                        budget,
                        ..TrialPlan::new(*params, InitialSpec::IidPoisson { mean: z }, n, trials, seed)
                    };
                    exit_sample(&plan, t)
                })
                .collect()
        });
        let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
        for row in &per_trial {
            for w in row.windows(2) {
                if let (Some(a), Some(b)) = (w[0], w[1]) {
                    if b < a {
                        violations += 1;
                    }
                }
            }
        }
        let mut prev = f64::NEG_INFINITY;
        let mut mono = true;
        for (j, &z) in zetas.iter().enumerate() {
            let done: Vec<f64> = per_trial.iter().filter_map(|r| r[j]).map(|m| m as f64 / n as f64).collect();
            let stats = mean_se(&done);
            if !done.is_empty() {
                mono &= stats.mean >= prev;
                prev = stats.mean;
            }
            cells.push(ScanCell {
                zeta: z,
                n,
                mean_mn_over_n: stats,
                completed: done.len() as u64,
                excluded_truncated: trials - done.len() as u64,
                failed: done.is_empty(),
            });
        }
        monotone.push((n, mono));
    }
    Ok(ScanReport {
        cells,
        monotone_means: monotone,
        pointwise_violations: violations,
    })
}

// ---------------------------------------------------------------------------
// critical density

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaProbe {
    pub zeta: f64,
    /// Mean of `M_n` and of `M_{n/2}`.
    pub mean_full: MeanSe,
    pub mean_half: MeanSe,
    /// `(mean_full - mean_half) / se_diff`.
    pub z_score: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaCBracket {
    pub lo: f64,
    pub hi: f64,
    pub n: u64,
    pub trials: u64,
    pub iterations: u64,
    pub probes: Vec<ZetaProbe>,
    /// Some probe was active below an inactive one; the bracket was
    /// widened to cover them.
    pub non_monotone: bool,
    pub excluded_truncated: u64,
}

impl ZetaCBracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Number of standard errors by which exits must grow from `V_{n/2}` to
/// `V_n` for a density to count as active.
pub const ZETA_C_SIGMAS: f64 = 3.0;

/// Probe one density: `M_n` and `M_{n/2}` from i.i.d. Poisson starts.
/// Trial `t` uses the same seeds at every density, so probes are coupled.
pub fn zeta_probe(params: &ModelParams, zeta: f64, n: u64, trials: u64, seed: u64, budget: u64) -> Result<(ZetaProbe, u64)> {
    let half = (n / 2).max(1);
    let spec = InitialSpec::IidPoisson { mean: zeta };
    let runs: Vec<Result<(Option<u64>, Option<u64>)>> = map_trials(trials, |t| {
        let full = spec.sample(n, initial_seed(seed, t))?;
        let small = spec.sample(half, derive(initial_seed(seed, t), STREAM_INITIAL, 1))?;
        let a = exit_sample_on(&full, n, params, array_seed(seed, t), budget, None)?;
        let b = exit_sample_on(&small, half, params, derive(array_seed(seed, t), STREAM_ARRAY, 1), budget, None)?;
        Ok((a, b))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let full: Vec<f64> = runs.iter().filter_map(|r| r.0).map(|m| m as f64).collect();
    let small: Vec<f64> = runs.iter().filter_map(|r| r.1).map(|m| m as f64).collect();
    let excluded = 2 * trials - full.len() as u64 - small.len() as u64;
    if full.is_empty() || small.is_empty() {
        return Err(Error::AllTrialsTruncated { trials });
    }
    let (mf, mh) = (mean_se(&full), mean_se(&small));
    let se = (mf.se * mf.se + mh.se * mh.se).sqrt();
    let diff = mf.mean - mh.mean;
    let z_score = if se > 0.0 {
        diff / se
    } else if diff > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok((
        ZetaProbe {
            zeta,
            mean_full: mf,
            mean_half: mh,
            z_score,
            active: z_score > ZETA_C_SIGMAS,
        },
        excluded,
    ))
}

/// Bracket the critical density by bisection on `[0, 1]`.
///
/// A density counts as active when the mean number of exits from `V_n`
/// exceeds that from `V_{n/2}` by more than [`ZETA_C_SIGMAS`] standard
/// errors: below criticality exits come from a boundary layer whose size
/// does not grow with `n`, above it they grow linearly.
pub fn estimate_zeta_c(params: &ModelParams, n: u64, trials: u64, tol: f64, seed: u64, budget: u64) -> Result<ZetaCBracket> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParams(format!("tol must be positive, got {tol}")));
    }
    if n < 2 || trials < 2 {
        return Err(Error::InvalidParams("estimate_zeta_c needs n >= 2 and trials >= 2".into()));
    }
    let mut probes: Vec<ZetaProbe> = Vec::new();
    let mut excluded = 0u64;
    let mut probe = |z: f64, probes: &mut Vec<ZetaProbe>| -> Result<bool> {
        let (p, ex) = zeta_probe(params, z, n, trials, seed, budget)?;
        excluded += ex;
        probes.push(p);
        Ok(p.active)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if !probe(hi, &mut probes)? {
        return Err(Error::InvalidParams(format!(
            "no growth of exits detected at density 1 with n = {n}; increase n or trials"
        )));
    }
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if probe(mid, &mut probes)? {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    // an active probe below an inactive one contradicts monotonicity
    let min_active = probes.iter().filter(|p| p.active).map(|p| p.zeta).fold(f64::INFINITY, f64::min);
    let max_inactive = probes.iter().filter(|p| !p.active).map(|p| p.zeta).fold(0.0, f64::max);
    let non_monotone = min_active < max_inactive;
    if non_monotone {
        lo = lo.min(min_active);
        hi = hi.max(max_inactive);
    }
    probes.sort_by(|a, b| a.zeta.total_cmp(&b.zeta));
    Ok(ZetaCBracket {
        lo,
        hi,
        n,
        trials,
        iterations,
        probes,
        non_monotone,
        excluded_truncated: excluded,
    })
}

// ---------------------------------------------------------------------------
// theorem checks

/// The two stock configurations with `ceil(zeta n)` particles.
pub fn theorem_generators(zeta: f64) -> Vec<InitialSpec> {
    vec![InitialSpec::Flat { zeta }, InitialSpec::PointMass { zeta }]
}

/// Counts of `M_n = 0` and `M_n > k` over trials. Each run stops at the
/// `k+1`-th exit, which already decides both events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitEvents {
    pub initial: String,
    pub n: u64,
    pub k: u64,
    pub trials: u64,
    pub completed: u64,
    pub zero: u64,
    pub above: u64,
    pub excluded_truncated: u64,
}

pub fn sample_exit_events(
    params: &ModelParams,
    initial: &InitialSpec,
    n: u64,
    k: u64,
    trials: u64,
    seed: u64,
    budget: u64,
) -> Result<ExitEvents> {
    initial.validate(n)?;
    let runs: Vec<Result<Option<u64>>> = map_trials(trials, |t| {
        let eta = initial.sample(n, initial_seed(seed, t))?;
        exit_sample_on(&eta, n, params, array_seed(seed, t), budget, Some(k + 1))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let done: Vec<u64> = runs.iter().flatten().copied().collect();
    if done.is_empty() {
        return Err(Error::AllTrialsTruncated { trials });
    }
    Ok(ExitEvents {
        initial: initial.describe(),
        n,
        k,
        trials,
        completed: done.len() as u64,
        zero: done.iter().filter(|&&m| m == 0).count() as u64,
        above: done.iter().filter(|&&m| m > k).count() as u64,
        excluded_truncated: trials - done.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheck {
    pub initial: String,
    pub estimate: Proportion,
    pub bound: f64,
    /// Signed distance from the bound in the direction of the claim,
    /// measured from the far end of the 99% interval.
    pub margin: f64,
    pub pass: bool,
    pub excluded_truncated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub zeta: f64,
    pub n: u64,
    pub zeta_c_hat: f64,
    pub epsilon: f64,
    /// Largest admissible epsilon (exclusive).
    pub epsilon_max: f64,
    pub bound: f64,
    /// The bound carries no information (`>= 1` for an upper bound,
    /// `<= 0` for a lower bound).
    pub vacuous: bool,
    pub generators: Vec<GeneratorCheck>,
    /// Index into `generators` of the least favourable one.
    pub worst: usize,
    pub pass: bool,
}

/// `P(M_n = 0) <= zeta_c / zeta`, checked on the events of each generator.
pub fn evaluate_no_exit(events: &[ExitEvents], zeta: f64, zeta_c_hat: f64) -> TheoremCheck {
    let bound = zeta_c_hat / zeta;
    let generators: Vec<GeneratorCheck> = events
        .iter()
        .map(|e| {
            let est = Proportion::new(e.zero, e.completed);
            GeneratorCheck {
                initial: e.initial.clone(),
                estimate: est,
                bound,
                margin: bound - est.lo,
                pass: est.lo <= bound,
                excluded_truncated: e.excluded_truncated,
            }
        })
        .collect();
    finish_check(generators, zeta, events, zeta_c_hat, 0.0, f64::NAN, bound, bound >= 1.0)
}

/// `P(M_n > epsilon n) >= 1 - (zeta_c/zeta)(1 + 4(1+lambda) epsilon/lambda)`.
pub fn evaluate_explicit(
    events: &[ExitEvents],
    params: &ModelParams,
    zeta: f64,
    zeta_c_hat: f64,
    epsilon: f64,
) -> Result<TheoremCheck> {
    let lambda = params.lambda;
    let epsilon_max = epsilon_range_end(lambda, zeta, zeta_c_hat);
    if !(epsilon >= 0.0 && epsilon < epsilon_max) {
        return Err(Error::EpsilonOutOfRange { eps: epsilon, max: epsilon_max });
    }
    let bound = 1.0 - (zeta_c_hat / zeta) * (1.0 + 4.0 * (1.0 + lambda) * epsilon / lambda);
    let generators: Vec<GeneratorCheck> = events
        .iter()
        .map(|e| {
            let est = Proportion::new(e.above, e.completed);
            GeneratorCheck {
                initial: e.initial.clone(),
                estimate: est,
                bound,
                margin: est.hi - bound,
                pass: est.hi >= bound,
                excluded_truncated: e.excluded_truncated,
            }
        })
        .collect();
    Ok(finish_check(generators, zeta, events, zeta_c_hat, epsilon, epsilon_max, bound, bound <= 0.0))
}

#[allow(clippy::too_many_arguments)]
fn finish_check(
    generators: Vec<GeneratorCheck>,
    zeta: f64,
    events: &[ExitEvents],
    zeta_c_hat: f64,
    epsilon: f64,
    epsilon_max: f64,
    bound: f64,
    vacuous: bool,
) -> TheoremCheck {
    let worst = generators
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.margin.total_cmp(&b.1.margin))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let pass = generators.iter().all(|g| g.pass);
    TheoremCheck {
        zeta,
        n: events.first().map(|e| e.n).unwrap_or(0),
        zeta_c_hat,
        epsilon,
        epsilon_max,
        bound,
        vacuous,
        generators,
        worst,
        pass,
    }
}

/// Right end `lambda (zeta - zeta_c) / (4 (1 + lambda) zeta_c)` of the
/// admissible epsilon range.
pub fn epsilon_range_end(lambda: f64, zeta: f64, zeta_c: f64) -> f64 {
    lambda * (zeta - zeta_c) / (4.0 * (1.0 + lambda) * zeta_c)
}

fn check_above_critical(zeta: f64, zeta_c_hat: f64) -> Result<()> {
    if zeta > zeta_c_hat && zeta_c_hat > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "need zeta > zeta_c_hat > 0, got zeta = {zeta}, zeta_c_hat = {zeta_c_hat}"
        )))
    }
}

/// Upper bound on the probability that nothing exits, over the stock
/// generators.
pub fn check_thm_no_exit(
    params: &ModelParams,
    zeta: f64,
    n: u64,
    trials: u64,
    zeta_c_hat: f64,
    seed: u64,
    budget: u64,
) -> Result<TheoremCheck> {
    check_above_critical(zeta, zeta_c_hat)?;
    let events = theorem_generators(zeta)
        .iter()
        .map(|g| sample_exit_events(params, g, n, 0, trials, seed, budget))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_no_exit(&events, zeta, zeta_c_hat))
}

/// Lower bound on the probability that more than `epsilon n` particles
/// exit, over the stock generators.
#[allow(clippy::too_many_arguments)]
pub fn check_thm_explicit(
    params: &ModelParams,
    zeta: f64,
    n: u64,
    trials: u64,
    zeta_c_hat: f64,
    epsilon: f64,
    seed: u64,
    budget: u64,
) -> Result<TheoremCheck> {
    check_above_critical(zeta, zeta_c_hat)?;
    let epsilon_max = epsilon_range_end(params.lambda, zeta, zeta_c_hat);
    if !(epsilon >= 0.0 && epsilon < epsilon_max) {
        return Err(Error::EpsilonOutOfRange { eps: epsilon, max: epsilon_max });
    }
    let k = (epsilon * n as f64).floor() as u64;
    let events = theorem_generators(zeta)
        .iter()
        .map(|g| sample_exit_events(params, g, n, k, trials, seed, budget))
        .collect::<Result<Vec<_>>>()?;
    evaluate_explicit(&events, params, zeta, zeta_c_hat, epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub n: u64,
    pub mean_mn_over_n: MeanSe,
    pub excluded_truncated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub zeta: f64,
    pub rows: Vec<DecayRow>,
    /// Pairs `(n_i, n_j)`, `n_i < n_j`, with
    /// `mean_j > mean_i + 2 sqrt(se_i^2 + se_j^2)`.
    pub violations: Vec<(u64, u64)>,
    /// No violating pair.
    pub non_increasing: bool,
    /// The largest size keeps more than half the level of the smallest and
    /// is more than 3 standard errors above 0.
    pub level_positive: bool,
    /// The largest size is more than 2 combined standard errors above the
    /// smallest.
    pub increasing: bool,
    /// Least-squares slope of the mean against `ln n`.
    pub log_slope: f64,
}

/// Mean `M_n / n` across sizes at density `zeta` with i.i.d. Poisson starts.
pub fn decay_trend(params: &ModelParams, zeta: f64, n_list: &[u64], trials: u64, seed: u64, budget: u64) -> Result<DecayReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams("n_list must be non-empty and increasing".into()));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let plan = TrialPlan {
            budget,
            ..TrialPlan::new(*params, InitialSpec::IidPoisson { mean: zeta }, n, trials, seed)
        };
        let s = run_exit_stats(&plan)?;
        rows.push(DecayRow {
            n,
            mean_mn_over_n: s.mean_mn_over_n,
            excluded_truncated: s.excluded_truncated,
        });
    }
    let mut violations = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, b) = (rows[i].mean_mn_over_n, rows[j].mean_mn_over_n);
            if b.mean > a.mean + 2.0 * (a.se * a.se + b.se * b.se).sqrt() {
                violations.push((rows[i].n, rows[j].n));
            }
        }
    }
    let (first, last) = (rows[0].mean_mn_over_n, rows[rows.len() - 1].mean_mn_over_n);
    let level_positive = last.mean > 0.5 * first.mean && last.mean > 3.0 * last.se;
    let increasing = last.mean > first.mean + 2.0 * (first.se * first.se + last.se * last.se).sqrt();
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_mn_over_n.mean).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    Ok(DecayReport {
        zeta,
        rows,
        non_increasing: violations.is_empty(),
        violations,
        level_positive,
        increasing,
        log_slope: if sxx > 0.0 { sxy / sxx } else { 0.0 },
    })
}

/// Exits at the estimated critical density should not grow in proportion
/// to `n`: passes when the trend is non-increasing within 2 standard errors.
pub fn check_critical_decay(
    params: &ModelParams,
    zeta_c_hat: f64,
    n_list: &[u64],
    trials: u64,
    seed: u64,
    budget: u64,
) -> Result<DecayReport> {
    decay_trend(params, zeta_c_hat, n_list, trials, seed, budget)
}

// ---------------------------------------------------------------------------
// no man's land and spread

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmlDominanceReport {
    pub n: u64,
    pub w: Interval,
    pub mean_mn: MeanSe,
    pub mean_mn_w: MeanSe,
    pub verdict: DominanceVerdict,
    /// Trials where the escorted count was checked against `M_n^W` on the
    /// same array, and how many of them violated `N >= M_n^W`.
    pub escort_checked: u64,
    pub escort_violations: u64,
    pub excluded_truncated: u64,
}

/// Independent samples of `M_n` and `M_n^W`, and the dominance test of the
/// former over the latter. The first `escort_trials` arrays used for
/// `M_n^W` are also run through the escorted procedure.
#[allow(clippy::too_many_arguments)]
pub fn nml_dominance(
    params: &ModelParams,
    initial: &InitialSpec,
    n: u64,
    w: Interval,
    trials: u64,
    escort_trials: u64,
    delta: f64,
    seed: u64,
    budget: u64,
) -> Result<NmlDominanceReport> {
    initial.validate(n)?;
    type Row = (Option<u64>, Option<u64>, Option<bool>);
    let runs: Vec<Result<Row>> = map_trials(trials, |t| {
        let eta = initial.sample(n, initial_seed(seed, t))?;
        let a = exit_sample_on(&eta, n, params, array_seed(seed, t), budget, None)?;
        let b_seed = derive(array_seed(seed, t), STREAM_ARRAY, 1);
        let b = match nml_report(&eta, n, w, params, b_seed, budget) {
            Ok(r) => Some(r.exits_total),
            Err(Error::BudgetExhausted { .. }) => None,
            Err(e) => return Err(e),
        };
        let escort = match (t < escort_trials, b) {
            (true, Some(mw)) => match escorted_stabilization(&eta, n, w, params, b_seed, budget, |_| Ok(())) {
                Ok(e) => Some(e.exits >= mw),
                Err(Error::BudgetExhausted { .. }) => None,
                Err(e) => return Err(e),
            },
            _ => None,
        };
        Ok((a, b, escort))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let a: Vec<u64> = runs.iter().filter_map(|r| r.0).collect();
    let b: Vec<u64> = runs.iter().filter_map(|r| r.1).collect();
    let checked: Vec<bool> = runs.iter().filter_map(|r| r.2).collect();
    let verdict = dominance_test(&a, &b, delta)?;
    let f = |v: &[u64]| mean_se(&v.iter().map(|&x| x as f64).collect::<Vec<_>>());
    Ok(NmlDominanceReport {
        n,
        w,
        mean_mn: f(&a),
        mean_mn_w: f(&b),
        verdict,
        escort_checked: checked.len() as u64,
        escort_violations: checked.iter().filter(|ok| !**ok).count() as u64,
        excluded_truncated: 2 * trials - a.len() as u64 - b.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub n: u64,
    pub k: u64,
    pub ell: u64,
    /// `P(M_n <= k)`.
    pub p_small: Proportion,
    /// `P(M_{n+4 ell} = 0)`, with the configuration extended by zeros.
    pub p_enlarged_zero: Proportion,
    /// Success rate of the two-step construction.
    pub p_construction: Proportion,
    /// `P(G_1 + ... + G_k <= ell - k)`, the trapping success probability.
    pub nb_implemented: f64,
    /// `P(G_1 + ... + G_k <= ell)`.
    pub nb_geometric: f64,
    /// `p_small * nb_implemented`.
    pub lower_bound: f64,
    pub combined_se: f64,
    /// `p_enlarged_zero >= lower_bound - 3 combined_se`.
    pub pass: bool,
    /// Same comparison for the construction's success rate.
    pub construction_pass: bool,
    /// `M'` (exits from `V_{n+2 ell}` in the first step) is dominated by `M_n`.
    pub m_prime_dominance: DominanceVerdict,
    pub excluded_truncated: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn spread_check(
    params: &ModelParams,
    initial: &InitialSpec,
    n: u64,
    k: u64,
    ell: u64,
    trials: u64,
    seed: u64,
    budget: u64,
) -> Result<SpreadReport> {
    initial.validate(n)?;
    let big = n + 4 * ell;
    type Row = (Option<u64>, Option<u64>, Option<(bool, u64)>);
    let runs: Vec<Result<Row>> = map_trials(trials, |t| {
        let eta = initial.sample(n, initial_seed(seed, t))?;
        let base = array_seed(seed, t);
        let m_n = exit_sample_on(&eta, n, params, base, budget, None)?;
        let eta_big = eta.rewindow(Interval::segment(big))?;
        let m_big = exit_sample_on(&eta_big, big, params, derive(base, STREAM_ARRAY, 1), budget, Some(1))?;
        let spread = match two_step_spread(&eta, n, ell, params, derive(base, STREAM_ARRAY, 2), budget) {
            Ok(s) => Some((s.no_exit_enlarged, s.m_prime)),
            Err(Error::BudgetExhausted { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok((m_n, m_big, spread))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let m_n: Vec<u64> = runs.iter().filter_map(|r| r.0).collect();
    let m_big: Vec<u64> = runs.iter().filter_map(|r| r.1).collect();
    let spread: Vec<(bool, u64)> = runs.iter().filter_map(|r| r.2).collect();
    if m_n.is_empty() || m_big.is_empty() || spread.is_empty() {
        return Err(Error::AllTrialsTruncated { trials });
    }
    let p_small = Proportion::new(m_n.iter().filter(|&&m| m <= k).count() as u64, m_n.len() as u64);
    let p_enlarged_zero = Proportion::new(m_big.iter().filter(|&&m| m == 0).count() as u64, m_big.len() as u64);
    let p_construction = Proportion::new(spread.iter().filter(|s| s.0).count() as u64, spread.len() as u64);
    let nb_implemented = trap_success_probability(k, ell, params);
    let nb_geometric = negative_binomial_cdf(k, ell as i64, params.sleep_probability());
    let lower_bound = p_small.estimate * nb_implemented;
    let se_of = |p: &Proportion| (p.se() * p.se() + (nb_implemented * p_small.se()).powi(2)).sqrt();
    let combined_se = se_of(&p_enlarged_zero);
    let m_prime: Vec<u64> = spread.iter().map(|s| s.1).collect();
    Ok(SpreadReport {
        n,
        k,
        ell,
        p_small,
        p_enlarged_zero,
        p_construction,
        nb_implemented,
        nb_geometric,
        lower_bound,
        combined_se,
        pass: p_enlarged_zero.estimate >= lower_bound - 3.0 * combined_se,
        construction_pass: p_construction.estimate >= lower_bound - 3.0 * se_of(&p_construction),
        m_prime_dominance: dominance_test(&m_n, &m_prime, 0.01)?,
        excluded_truncated: 3 * trials - m_n.len() as u64 - m_big.len() as u64 - spread.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1() -> ModelParams {
        ModelParams::symmetric(1.0).unwrap()
    }

    #[test]
    fn flat_counts_hit_total() {
        for n in 1..30u64 {
            for total in 0..70u64 {
                let c = flat_counts(n, total);
                assert_eq!(c.iter().map(|&x| x as u64).sum::<u64>(), total);
                let (mn, mx) = (c.iter().min().unwrap(), c.iter().max().unwrap());
                assert!(mx - mn <= 1);
            }
        }
        assert_eq!(total_for(0.3, 10), 3);
        assert_eq!(total_for(0.31, 10), 4);
    }

    #[test]
    fn poisson_configurations_are_nested() {
        for t in 0..20 {
            let a = InitialSpec::IidPoisson { mean: 0.6 }.sample(50, t).unwrap();
            let b = InitialSpec::IidPoisson { mean: 0.9 }.sample(50, t).unwrap();
            assert!(a.count_le(&b));
        }
    }

    #[test]
    fn poisson_mean_is_right() {
        let c = InitialSpec::IidPoisson { mean: 1.7 }.sample(200_000, 3).unwrap();
        let mean = c.total_particles() as f64 / 200_000.0;
        assert!((mean - 1.7).abs() < 4.0 * (1.7f64 / 200_000.0).sqrt());
    }

    #[test]
    fn parse_forms() {
        assert_eq!(InitialSpec::parse("single", 1).unwrap(), InitialSpec::Deterministic(vec![1]));
        assert_eq!(InitialSpec::parse("single", 4).unwrap(), InitialSpec::Deterministic(vec![0, 1, 0, 0]));
        assert_eq!(InitialSpec::parse("const:2", 3).unwrap(), InitialSpec::Deterministic(vec![2, 2, 2]));
        assert_eq!(InitialSpec::parse("counts:1,0,3", 5).unwrap(), InitialSpec::Deterministic(vec![1, 0, 3]));
        assert_eq!(InitialSpec::parse("poisson:0.9", 5).unwrap(), InitialSpec::IidPoisson { mean: 0.9 });
        assert_eq!(InitialSpec::parse("flat:1.5", 5).unwrap(), InitialSpec::Flat { zeta: 1.5 });
        assert!(InitialSpec::parse("counts:1,1,1", 2).is_err());
        assert!(InitialSpec::parse("dist:0.5,0.4", 2).is_err());
        assert!(InitialSpec::parse("bogus", 2).is_err());
    }

    #[test]
    fn zero_configuration_never_exits() {
        let plan = TrialPlan::new(p1(), InitialSpec::Deterministic(vec![]), 10, 50, 1);
        let s = run_exit_stats(&plan).unwrap();
        assert_eq!(s.mean_mn_over_n.mean, 0.0);
        assert_eq!(s.p_zero.estimate, 1.0);
        assert_eq!(s.histogram, vec![(0, 50)]);
    }

    #[test]
    fn histogram_and_exclusions_add_up() {
        let mut mixed = false;
        for budget in [250, 500, 1000, 2000, 4000, 8000] {
            let plan = TrialPlan {
                budget,
                ..TrialPlan::new(p1(), InitialSpec::Flat { zeta: 1.5 }, 20, 40, 2)
            };
            let Ok(s) = run_exit_stats(&plan) else { continue };
            let mass: u64 = s.histogram.iter().map(|h| h.1).sum();
            assert_eq!(mass + s.excluded_truncated, 40);
            mixed |= s.excluded_truncated > 0 && mass > 0;
        }
        assert!(mixed, "no budget produced a mix of truncated and completed trials");
    }

    #[test]
    fn all_truncated_is_an_error() {
        let plan = TrialPlan {
            budget: 1,
            ..TrialPlan::new(p1(), InitialSpec::Flat { zeta: 2.0 }, 20, 5, 2)
        };
        assert_eq!(run_exit_stats(&plan), Err(Error::AllTrialsTruncated { trials: 5 }));
    }

    #[test]
    fn epsilon_range() {
        let max = epsilon_range_end(1.0, 2.0, 1.0);
        assert!((max - 1.0 / 8.0).abs() < 1e-15);
        let events = vec![];
        assert!(matches!(
            evaluate_explicit(&events, &p1(), 2.0, 1.0, 0.2),
            Err(Error::EpsilonOutOfRange { .. })
        ));
        // at epsilon = 0 the bound is the complement of the no-exit bound
        let e = evaluate_explicit(&events, &p1(), 2.0, 0.8, 0.0).unwrap();
        assert!((e.bound - (1.0 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn zero_density_decays_trivially() {
        let r = decay_trend(&p1(), 0.0, &[10, 20], 10, 1, DEFAULT_BUDGET).unwrap();
        assert!(r.rows.iter().all(|row| row.mean_mn_over_n.mean == 0.0));
        assert!(r.non_increasing);
    }
}

//! The block configuration and its coupling with a coarse-grained walk.
//!
//! Blocks `B_k = V_n + kn`, `|k| <= K`, each start with a copy of `eta`
//! with probability `q`. The block model is stabilized one block at a time,
//! always the occupied block closest to the origin, while a coarse model
//! with one site per block is driven in lockstep: a good stabilization of
//! a block writes a sleep into the coarse array, a bad one writes a jump
//! toward the origin and marches the block's particles into the next block
//! inward. Coarse instructions are only ever rewritten just before they are
//! consumed, so the coarse array keeps its law.
//!
//! The simulated line is the blocks `|k| <= K` plus `margin_blocks` empty
//! blocks on each side, where marching walkers may wander.

use serde::{Deserialize, Serialize};

use arw_core::seed::{derive, unit_f64, STREAM_ARRAY, STREAM_COARSE, STREAM_INITIAL, STREAM_OFFSET, STREAM_PILOT};
use arw_core::{topple, Config, Error, Instruction, InstructionArray, Interval, JumpLaw, ModelParams, Result, SiteContent};
use arw_core::{ToppleMode, ToppleOutcome};
use arw_experiments::map_trials;
use arw_experiments::output::{s, Table};
use arw_experiments::stats::{two_proportion_test, Proportion, TwoProportionTest};
use arw_stabilize::{check_support, stabilize, StabilizeRequest};

pub const DEFAULT_MARCH_BUDGET: u64 = 10_000_000;

/// Coarse configurations use the site contents of the block model: one
/// coarse particle stands for `||eta||` particles of a block.
pub type CoarseConfig = Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Block length.
    pub n: u64,
    /// Particle counts of `eta` on `V_n`, from its left end.
    pub eta: Vec<u32>,
    /// Blocks `-K..=K` carry particles.
    pub k_max: u64,
    /// Occupation probability of a block.
    pub q: f64,
    /// Empty blocks simulated beyond `K` on each side.
    pub margin_blocks: u64,
}

impl BlockSpec {
    /// A walker marching `d` sites gets `L` sites away on the wrong side
    /// first with probability about `d / L`, so the margin must be wide.
    pub const DEFAULT_MARGIN_SITES: u64 = 1 << 14;

    pub fn new(n: u64, eta: Vec<u32>, k_max: u64, q: f64) -> Self {
        BlockSpec {
            n,
            eta,
            k_max,
            q,
            margin_blocks: Self::DEFAULT_MARGIN_SITES.div_ceil(n.max(1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.eta.len() as u64 != self.n {
            return Err(Error::InvalidParams(format!(
                "eta must have exactly n = {} entries, got {}",
                self.n,
                self.eta.len()
            )));
        }
        if self.mass() == 0 {
            return Err(Error::InvalidParams("eta must not be zero".into()));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::InvalidParams(format!("q must lie in [0, 1], got {}", self.q)));
        }
        Ok(())
    }

    /// `||eta||`.
    pub fn mass(&self) -> u64 {
        self.eta.iter().map(|&c| c as u64).sum()
    }

    pub fn block(&self, k: i64) -> Interval {
        Interval::segment(self.n).shift(k * self.n as i64)
    }

    pub fn coarse_window(&self) -> Interval {
        Interval::new(-(self.k_max as i64), self.k_max as i64)
    }

    /// Sites of the blocks `|k| <= K`.
    pub fn block_region(&self) -> Interval {
        let k = self.k_max as i64;
        Interval::new(self.block(-k).lo, self.block(k).hi)
    }

    pub fn window(&self) -> Interval {
        let k = (self.k_max + self.margin_blocks) as i64;
        Interval::new(self.block(-k).lo, self.block(k).hi)
    }

    /// `eta` translated into block `k`, at site `x`.
    pub fn eta_bar(&self, k: i64, x: i64) -> u32 {
        let b = self.block(k);
        if b.contains(x) {
            self.eta[(x - b.lo) as usize]
        } else {
            0
        }
    }

    pub fn eta_config(&self) -> Result<Config> {
        let v = Interval::segment(self.n);
        Config::from_counts(v, v.lo, &self.eta)
    }
}

/// I.i.d. Bernoulli(q) coarse occupation and the block configuration with a
/// copy of `eta` in every occupied block.
pub fn build_block_config(spec: &BlockSpec, seed: u64) -> Result<(Config, CoarseConfig)> {
    spec.validate()?;
    let cw = spec.coarse_window();
    let mut coarse = Config::empty(cw);
    let mut xi = Config::empty(spec.window());
    for k in cw.iter() {
        if unit_f64(derive(seed, 0, (k - cw.lo) as u64)) < spec.q {
            coarse.set(k, SiteContent::active(1))?;
            for x in spec.block(k).iter() {
                xi.set(x, SiteContent::active(spec.eta_bar(k, x)))?;
            }
        }
    }
    Ok((xi, coarse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCase {
    /// Single coarse particle, no particle left the block.
    Good,
    /// Single coarse particle, some particle left the block.
    Bad,
    /// Several coarse particles on the block.
    Multiplicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub j: u64,
    pub k: i64,
    pub case: StepCase,
    /// Coarse instruction written (and consumed) in this step.
    pub tau_prime_write: Option<Instruction>,
    /// Coarse instructions consumed in this step.
    pub tau_prime_reads: u32,
    /// The coarse jump made in this step, if any.
    pub tau_prime_jump: Option<Instruction>,
    /// Particles marched to the next block inward.
    pub marched: u64,
    pub block_topplings: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingOptions {
    /// Maximum number of coupling steps.
    pub step_budget: u64,
    /// Maximum number of topplings per block stabilization or march.
    pub march_budget: u64,
    /// Sleep probability of the coarse array's instructions.
    pub background_sleep: f64,
}

impl CouplingOptions {
    pub fn new(background_sleep: f64) -> Self {
        CouplingOptions {
            step_budget: 1_000_000,
            march_budget: DEFAULT_MARCH_BUDGET,
            background_sleep,
        }
    }
}

/// Joint state of the block model and the coarse model after `j` steps.
/// The odometers `h` and `h'` are the consumption counts of `tau` and
/// `tau_prime`.
#[derive(Debug, Clone)]
pub struct CouplingState {
    pub spec: BlockSpec,
    pub xi: Config,
    pub xi_prime: CoarseConfig,
    pub tau: InstructionArray,
    pub tau_prime: InstructionArray,
    pub j: u64,
    /// Coarse jumps made at each coarse site.
    jumps: Vec<u64>,
    march_budget: u64,
}

impl CouplingState {
    pub fn new(spec: &BlockSpec, params: &ModelParams, background_sleep: f64, seed: u64) -> Result<Self> {
        params.validate()?;
        if !(0.0..=1.0).contains(&background_sleep) {
            return Err(Error::InvalidParams(format!(
                "background sleep probability must lie in [0, 1], got {background_sleep}"
            )));
        }
        let (xi, xi_prime) = build_block_config(spec, derive(seed, STREAM_INITIAL, 0))?;
        Ok(CouplingState {
            spec: spec.clone(),
            xi,
            xi_prime,
            tau: InstructionArray::new(params, derive(seed, STREAM_ARRAY, 0)),
            tau_prime: InstructionArray::with_law(background_sleep, JumpLaw::TowardOrigin, derive(seed, STREAM_COARSE, 0)),
            j: 0,
            jumps: vec![0; spec.coarse_window().len() as usize],
            march_budget: DEFAULT_MARCH_BUDGET,
        })
    }

    pub fn h(&self, x: i64) -> u32 {
        self.tau.used(x)
    }

    pub fn h_prime(&self, k: i64) -> u32 {
        self.tau_prime.used(k)
    }

    pub fn coarse_jumps(&self, k: i64) -> u64 {
        self.jumps[(k + self.spec.k_max as i64) as usize]
    }

    /// The step is the identity once the coarse model is stable or its
    /// origin is occupied.
    pub fn halted(&self) -> bool {
        self.xi_prime.get(0) != SiteContent::Empty || self.closest_active().is_none()
    }

    /// Active coarse site closest to the origin, positive side first.
    fn closest_active(&self) -> Option<i64> {
        (0..=self.spec.k_max as i64).find_map(|d| {
            [d, -d].into_iter().find(|&k| self.xi_prime.get(k).is_active())
        })
    }

    fn inward(k: i64) -> i64 {
        k - k.signum()
    }

    fn toward_origin(k: i64) -> Instruction {
        if k > 0 {
            Instruction::JumpLeft
        } else {
            Instruction::JumpRight
        }
    }

    /// One step of the construction. `None` when halted.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.halted() {
            return Ok(None);
        }
        let k = self.closest_active().expect("not halted");
        let ell = Self::inward(k);
        let mass = self.spec.mass();
        let cw = self.spec.coarse_window();
        let block = self.spec.block(k);
        let before = self.h_prime(k);
        let record = match self.xi_prime.get(k) {
            SiteContent::Active(1) => {
                let req = StabilizeRequest::new(self.xi.clone(), block)
                    .kill_region(self.spec.window())
                    .budget(self.march_budget);
                let r = stabilize(&req, &mut self.tau)?;
                if r.truncated {
                    return Err(Error::MarchBudgetExhausted { budget: self.march_budget });
                }
                if r.exits_total > 0 {
                    return Err(Error::BlockWindowOverflow { site: block.lo });
                }
                self.xi = r.final_config;
                let good = r.escapes_left + r.escapes_right == 0;
                let write = if good { Instruction::Sleep } else { Self::toward_origin(k) };
                self.tau_prime.install_override(k, before + 1, write)?;
                let (read, outcome) = topple(&mut self.xi_prime, &mut self.tau_prime, k, ToppleMode::Legal, cw)?;
                debug_assert_eq!(read, write);
                let mut marched = 0;
                let mut topplings = r.topplings;
                if good {
                    debug_assert_eq!(outcome, ToppleOutcome::Slept);
                } else {
                    // the block's particles: those left in it plus those that
                    // landed just outside
                    let mut particles = Vec::new();
                    for x in block.iter() {
                        for _ in 0..self.xi.get(x).count() {
                            particles.push(x);
                        }
                    }
                    particles.extend(std::iter::repeat_n(block.lo - 1, r.escapes_left as usize));
                    particles.extend(std::iter::repeat_n(block.hi + 1, r.escapes_right as usize));
                    debug_assert_eq!(particles.len() as u64, mass);
                    marched = particles.len() as u64;
                    topplings += self.forced_march(k, &particles)?;
                    self.jumps[(k - cw.lo) as usize] += 1;
                }
                StepRecord {
                    j: self.j + 1,
                    k,
                    case: if good { StepCase::Good } else { StepCase::Bad },
                    tau_prime_write: Some(write),
                    tau_prime_reads: 1,
                    tau_prime_jump: (!good).then_some(write),
                    marched,
                    block_topplings: topplings,
                }
            }
            SiteContent::Active(_) => {
                // move `||eta||` particles beyond the copy of eta, innermost first
                let mut particles = Vec::new();
                let sites: Vec<i64> = if k > 0 { block.iter().collect() } else { block.iter().rev().collect() };
                for x in sites {
                    let spare = self.xi.get(x).count().saturating_sub(self.spec.eta_bar(k, x));
                    for _ in 0..spare {
                        if (particles.len() as u64) < mass {
                            particles.push(x);
                        }
                    }
                }
                if (particles.len() as u64) < mass {
                    return Err(Error::InvariantViolated {
                        item: "block-contents",
                        detail: format!("block {k} has fewer than {mass} spare particles"),
                    });
                }
                let topplings = self.forced_march(k, &particles)?;
                let mut reads = 0;
                let jump = loop {
                    let (instr, outcome) = topple(&mut self.xi_prime, &mut self.tau_prime, k, ToppleMode::Legal, cw)?;
                    reads += 1;
                    match outcome {
                        ToppleOutcome::SleepIgnored => continue,
                        ToppleOutcome::Moved { .. } => break instr,
                        other => {
                            return Err(Error::InvariantViolated {
                                item: "coarse-move",
                                detail: format!("coarse toppling at {k} gave {other:?}"),
                            })
                        }
                    }
                };
                self.jumps[(k - cw.lo) as usize] += 1;
                StepRecord {
                    j: self.j + 1,
                    k,
                    case: StepCase::Multiplicity,
                    tau_prime_write: None,
                    tau_prime_reads: reads,
                    tau_prime_jump: Some(jump),
                    marched: mass,
                    block_topplings: topplings,
                }
            }
            _ => unreachable!("closest_active returned an inactive site"),
        };
        debug_assert!(ell.abs() < k.abs());
        self.j += 1;
        self.check_overrides(k, before, &record)?;
        self.check_invariants()?;
        Ok(Some(record))
    }

    /// Move the particles at `particles` (with multiplicity) by acceptable
    /// topplings until they form `eta` in the block next to `B_k` toward the
    /// origin. Returns the number of topplings.
    ///
    /// Destinations are filled innermost first, each by the innermost
    /// remaining particle, and a walker stops on first reaching its
    /// destination. Since every particle starts at or beyond every
    /// destination, a walker never passes an already filled destination nor
    /// any site closer to the origin than its own.
    pub fn forced_march(&mut self, k: i64, particles: &[i64]) -> Result<u64> {
        if k == 0 {
            return Err(Error::InvalidParams("cannot march out of the origin block".into()));
        }
        let ell = Self::inward(k);
        let target = self.spec.block(ell);
        let s = k.signum();
        let mut dests = Vec::new();
        for x in target.iter() {
            for _ in 0..self.spec.eta_bar(ell, x) {
                dests.push(x);
            }
        }
        if dests.len() != particles.len() {
            return Err(Error::InvalidParams(format!(
                "{} particles for {} destinations",
                particles.len(),
                dests.len()
            )));
        }
        // innermost first: increasing s * x
        dests.sort_by_key(|&x| s * x);
        let mut walkers = particles.to_vec();
        walkers.sort_by_key(|&x| s * x);
        let window = self.spec.window();
        let mut topplings = 0u64;
        for (&d, &start) in dests.iter().zip(&walkers) {
            if s * start < s * d {
                return Err(Error::InvalidParams(format!("particle at {start} is inside its destination {d}")));
            }
            let mut at = start;
            while at != d {
                if topplings >= self.march_budget {
                    return Err(Error::MarchBudgetExhausted { budget: self.march_budget });
                }
                let (_, outcome) = topple(&mut self.xi, &mut self.tau, at, ToppleMode::Acceptable, window)?;
                topplings += 1;
                match outcome {
                    ToppleOutcome::Moved { to } => {
                        if s * to < s * d {
                            return Err(Error::InvariantViolated {
                                item: "march",
                                detail: format!("walker to {d} stepped past it to {to}"),
                            });
                        }
                        at = to;
                    }
                    ToppleOutcome::Killed { .. } => return Err(Error::BlockWindowOverflow { site: at }),
                    // sleeping is undone by the next acceptable toppling
                    ToppleOutcome::Slept | ToppleOutcome::SleepIgnored => {}
                }
            }
        }
        Ok(topplings)
    }

    fn check_overrides(&self, k: i64, before: u32, record: &StepRecord) -> Result<()> {
        let log = self.tau_prime.override_log();
        let written = log.iter().filter(|e| e.0 == k && e.1 > before).count();
        let ok = match record.tau_prime_write {
            Some(w) => written == 1 && self.tau_prime.override_at(k, before + 1) == Some(w) && self.h_prime(k) > before,
            None => written == 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvariantViolated {
                item: "coarse-array",
                detail: format!("coarse array at {k} rewritten away from the consumed slot {}", before + 1),
            })
        }
    }

    /// Block contents match the coarse state, no sleeping block lies farther
    /// out than a block holding a single active copy, the origin block is
    /// untouched while the coarse origin is empty, and particles are
    /// conserved.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |item: &'static str, detail: String| Err(Error::InvariantViolated { item, detail });
        let mass = self.spec.mass();
        let cw = self.spec.coarse_window();
        let mut coarse_total = 0u64;
        for k in cw.iter() {
            let b = self.spec.block(k);
            let count = self.xi.particles_in(b);
            match self.xi_prime.get(k) {
                SiteContent::Empty => {
                    if count != 0 {
                        return fail("block-contents", format!("coarse site {k} empty but block holds {count}"));
                    }
                }
                SiteContent::Sleeping => {
                    coarse_total += 1;
                    if count != mass || b.iter().any(|x| !matches!(self.xi.get(x), SiteContent::Empty | SiteContent::Sleeping)) {
                        return fail("block-contents", format!("coarse site {k} asleep but block is not {mass} sleepers"));
                    }
                }
                SiteContent::Active(l) => {
                    coarse_total += l as u64;
                    if count != l as u64 * mass {
                        return fail("block-contents", format!("coarse site {k} holds {l} but block holds {count}"));
                    }
                    for x in b.iter() {
                        let e = self.spec.eta_bar(k, x);
                        if e > 0 && !matches!(self.xi.get(x), SiteContent::Active(c) if c >= e) {
                            return fail("block-contents", format!("block {k} lacks the copy of eta at {x}"));
                        }
                    }
                }
            }
        }
        if self.xi.total_particles() != coarse_total * mass {
            return fail("block-contents", "particles outside the blocks".into());
        }
        // The origin is left out: the step that first occupies it may leave
        // it active next to a sleeping block, and the construction stops
        // right there.
        for side in [1i64, -1] {
            let far_sleep = (1..=self.spec.k_max as i64)
                .filter(|&d| self.xi_prime.get(side * d) == SiteContent::Sleeping)
                .max();
            let near_single = (1..=self.spec.k_max as i64)
                .filter(|&d| self.xi_prime.get(side * d) == SiteContent::Active(1))
                .min();
            if let (Some(s), Some(a)) = (far_sleep, near_single) {
                if s > a {
                    return fail("sleep-order", format!("sleeping block at {} beyond active block at {}", side * s, side * a));
                }
            }
        }
        if self.xi_prime.get(0) == SiteContent::Empty && self.block0_toppled() {
            return fail("origin-block", "origin block toppled while the coarse origin is empty".into());
        }
        Ok(())
    }

    pub fn block0_toppled(&self) -> bool {
        self.spec.block(0).iter().any(|x| self.tau.used(x) > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub seed: u64,
    pub initial_blocks: u64,
    pub steps: Vec<StepRecord>,
    pub coarse_origin_visited: bool,
    pub block0_odometer_nonzero: bool,
    /// Set when the run stopped on an error; invariant violations land here
    /// too, with the item in the message.
    pub aborted: Option<String>,
    pub invariant_violation: bool,
    /// `coarse_origin_visited` or `!block0_odometer_nonzero`. Meaningful
    /// only for traces that were not aborted.
    pub implication_holds: bool,
    /// Coarse sites `k` with more than `|k| - 1` jumps in a trace that ended
    /// stable with an empty origin.
    pub jump_bound_violations: Vec<i64>,
}

impl CouplingTrace {
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }

    /// One JSON object per step, then one for the outcome.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let line = serde_json::json!({
                "j": s.j,
                "k": s.k,
                "case": s.case,
                "tau_prime_write": s.tau_prime_write,
                "tau_prime_reads": s.tau_prime_reads,
                "marched": s.marched,
                "aborted_reason": serde_json::Value::Null,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let end = serde_json::json!({
            "j": self.steps.len(),
            "k": serde_json::Value::Null,
            "case": "end",
            "tau_prime_write": serde_json::Value::Null,
            "marched": 0,
            "aborted_reason": self.aborted,
            "coarse_origin_visited": self.coarse_origin_visited,
            "block0_odometer_nonzero": self.block0_odometer_nonzero,
        });
        out.push_str(&end.to_string());
        out.push('\n');
        out
    }
}

/// Run the construction until it halts or fails.
pub fn run_coupling(spec: &BlockSpec, params: &ModelParams, seed: u64, options: &CouplingOptions) -> Result<CouplingTrace> {
    let mut state = CouplingState::new(spec, params, options.background_sleep, seed)?;
    state.march_budget = options.march_budget;
    let initial_blocks = state.xi_prime.total_particles();
    let mut steps = Vec::new();
    let mut aborted = None;
    let mut invariant_violation = false;
    if let Err(e) = state.check_invariants() {
        invariant_violation = true;
        aborted = Some(e.to_string());
    }
    while aborted.is_none() && !state.halted() {
        if steps.len() as u64 >= options.step_budget {
            aborted = Some(format!("step budget of {} exhausted", options.step_budget));
            break;
        }
        match state.step() {
            Ok(Some(r)) => steps.push(r),
            Ok(None) => break,
            Err(e) => {
                invariant_violation = matches!(e, Error::InvariantViolated { .. });
                aborted = Some(e.to_string());
            }
        }
    }
    let visited = state.xi_prime.get(0) != SiteContent::Empty;
    let block0 = state.block0_toppled();
    let mut jump_bound_violations = Vec::new();
    if aborted.is_none() && !visited {
        for k in state.spec.coarse_window().iter().filter(|&k| k != 0) {
            if state.coarse_jumps(k) + 1 > k.unsigned_abs() {
                jump_bound_violations.push(k);
            }
        }
    }
    Ok(CouplingTrace {
        seed,
        initial_blocks,
        steps,
        coarse_origin_visited: visited,
        block0_odometer_nonzero: block0,
        aborted,
        invariant_violation,
        implication_holds: visited || !block0,
        jump_bound_violations,
    })
}

/// `P(M_n = 0)` for `eta`, from `trials` independent arrays. Runs stop at
/// the first exit.
pub fn estimate_good_probability(spec: &BlockSpec, params: &ModelParams, trials: u64, seed: u64) -> Result<Proportion> {
    spec.validate()?;
    let eta = spec.eta_config()?;
    let v = Interval::segment(spec.n);
    check_support(&eta, v)?;
    let runs: Vec<Result<bool>> = map_trials(trials, |t| {
        let req = StabilizeRequest::new(eta.clone(), v).stop_after_exits(1);
        let mut array = InstructionArray::new(params, derive(seed, STREAM_PILOT, t));
        let r = stabilize(&req, &mut array)?;
        if r.truncated {
            return Err(Error::BudgetExhausted { budget: req.budget });
        }
        Ok(r.exits_total == 0)
    });
    let good = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Proportion::new(good.iter().filter(|g| **g).count() as u64, trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingBatch {
    pub spec: BlockSpec,
    pub params: ModelParams,
    pub master_seed: u64,
    pub background_sleep: f64,
    pub traces: Vec<CouplingTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub traces: u64,
    pub completed: u64,
    pub aborted: u64,
    pub invariant_violations: u64,
    pub implication_violations: u64,
    pub jump_bound_violations: u64,
    pub origin_visited: u64,
    /// `P(coarse origin never visited)` among completed traces.
    pub p_origin_clear: Proportion,
}

impl CouplingBatch {
    pub fn summary(&self) -> CouplingSummary {
        let completed: Vec<&CouplingTrace> = self.traces.iter().filter(|t| t.completed()).collect();
        let visited = completed.iter().filter(|t| t.coarse_origin_visited).count() as u64;
        CouplingSummary {
            traces: self.traces.len() as u64,
            completed: completed.len() as u64,
            aborted: (self.traces.len() - completed.len()) as u64,
            invariant_violations: self.traces.iter().filter(|t| t.invariant_violation).count() as u64,
            implication_violations: completed.iter().filter(|t| !t.implication_holds).count() as u64,
            jump_bound_violations: completed.iter().filter(|t| !t.jump_bound_violations.is_empty()).count() as u64,
            origin_visited: visited,
            p_origin_clear: Proportion::new(completed.len() as u64 - visited, completed.len() as u64),
        }
    }
}

/// Trace `t` of a batch runs with seed `derive(master, STREAM_COARSE, t + 1)`.
pub fn run_coupling_batch(
    spec: &BlockSpec,
    params: &ModelParams,
    traces: u64,
    master_seed: u64,
    options: &CouplingOptions,
) -> Result<CouplingBatch> {
    spec.validate()?;
    let runs: Vec<Result<CouplingTrace>> =
        map_trials(traces, |t| run_coupling(spec, params, derive(master_seed, STREAM_COARSE, t + 1), options));
    Ok(CouplingBatch {
        spec: spec.clone(),
        params: *params,
        master_seed,
        background_sleep: options.background_sleep,
        traces: runs.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauPrimeReport {
    /// Coarse instructions written at single-particle steps.
    pub consumed: u64,
    pub sleeps: u64,
    pub frequency: Proportion,
    pub p_hat: Proportion,
    pub test: TwoProportionTest,
    /// The test does not reject equality at level 0.01.
    pub consistent: bool,
    /// Consumed coarse jumps pointing away from the origin.
    pub direction_violations: u64,
}

impl TauPrimeReport {
    /// The equality test does not reject at level `alpha`.
    pub fn consistent_at(&self, alpha: f64) -> bool {
        self.test.p_value >= alpha
    }
}

/// Compare the sleep frequency among written coarse instructions with an
/// independent estimate of `P(M_n = 0)`, and check that every consumed
/// coarse jump points toward the origin.
pub fn tau_prime_marginal_stats(traces: &[CouplingTrace], p_hat: Proportion) -> Result<TauPrimeReport> {
    let mut consumed = 0u64;
    let mut sleeps = 0u64;
    let mut direction_violations = 0u64;
    for s in traces.iter().flat_map(|t| &t.steps) {
        if let Some(w) = s.tau_prime_write {
            consumed += 1;
            sleeps += w.is_sleep() as u64;
        }
        if let Some(j) = s.tau_prime_jump {
            if j.step() != -s.k.signum() {
                direction_violations += 1;
            }
        }
    }
    if consumed == 0 {
        return Err(Error::InsufficientSamples("no coarse instruction was written".into()));
    }
    let test = two_proportion_test(sleeps, consumed, p_hat.successes, p_hat.trials)?;
    Ok(TauPrimeReport {
        consumed,
        sleeps,
        frequency: Proportion::new(sleeps, consumed),
        p_hat,
        test,
        consistent: test.p_value >= 0.01,
        direction_violations,
    })
}

/// `xi` translated by an offset drawn uniformly from `V_n`.
pub fn random_offset_sample(xi: &Config, n: u64, seed: u64) -> Result<(Config, i64)> {
    if n == 0 {
        return Err(Error::InvalidParams("block length must be positive".into()));
    }
    let v = Interval::segment(n);
    let y = v.lo + (unit_f64(derive(seed, STREAM_OFFSET, 0)) * n as f64) as i64;
    Ok((translate(xi, y)?, y))
}

pub fn translate(xi: &Config, by: i64) -> Result<Config> {
    let w = xi.window();
    let mut out = Config::empty(w.shift(by));
    for x in w.iter() {
        out.set(x + by, xi.get(x))?;
    }
    Ok(out)
}

pub fn coupling_trace_table(batch: &CouplingBatch) -> Table {
    let mut t = Table::new(
        "coupling-trace/1",
        &[
            "trace", "seed", "initial_blocks", "steps", "good", "bad", "multiplicity", "coarse_origin_visited",
            "block0_odometer_nonzero", "implication_holds", "jump_bound_ok", "aborted_reason",
        ],
    );
    for (i, tr) in batch.traces.iter().enumerate() {
        let count = |c: StepCase| tr.steps.iter().filter(|st| st.case == c).count();
        t.push(vec![
            s(i),
            s(tr.seed),
            s(tr.initial_blocks),
            s(tr.steps.len()),
            s(count(StepCase::Good)),
            s(count(StepCase::Bad)),
            s(count(StepCase::Multiplicity)),
            s(tr.coarse_origin_visited),
            s(tr.block0_odometer_nonzero),
            s(tr.implication_holds),
            s(tr.jump_bound_violations.is_empty()),
            tr.aborted.clone().unwrap_or_default(),
        ]);
    }
    t
}

pub fn coupling_summary_table(batch: &CouplingBatch, tau: Option<&TauPrimeReport>) -> Table {
    let mut t = Table::new(
        "coupling-summary/1",
        &[
            "block_n", "K", "q", "eta_mass", "lambda", "p_right", "traces", "completed", "aborted", "invariant_violations",
            "implication_violations", "jump_bound_violations", "p_origin_clear", "background_sleep", "tau_consumed",
            "tau_sleep_freq", "p_hat", "tau_p_value", "direction_violations",
        ],
    );
    let sm = batch.summary();
    let na = String::new;
    t.push(vec![
        s(batch.spec.n),
        s(batch.spec.k_max),
        s(batch.spec.q),
        s(batch.spec.mass()),
        s(batch.params.lambda),
        s(batch.params.p_right),
        s(sm.traces),
        s(sm.completed),
        s(sm.aborted),
        s(sm.invariant_violations),
        s(sm.implication_violations),
        s(sm.jump_bound_violations),
        s(sm.p_origin_clear.estimate),
        s(batch.background_sleep),
        tau.map(|r| s(r.consumed)).unwrap_or_else(na),
        tau.map(|r| s(r.frequency.estimate)).unwrap_or_else(na),
        tau.map(|r| s(r.p_hat.estimate)).unwrap_or_else(na),
        tau.map(|r| s(r.test.p_value)).unwrap_or_else(na),
        tau.map(|r| s(r.direction_violations)).unwrap_or_else(na),
    ]);
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1() -> ModelParams {
        ModelParams::symmetric(1.0).unwrap()
    }

    #[test]
    fn block_config_extremes() {
        let spec = BlockSpec::new(5, vec![1; 5], 4, 0.0);
        let (xi, c) = build_block_config(&spec, 1).unwrap();
        assert_eq!(xi.total_particles(), 0);
        assert_eq!(c.total_particles(), 0);
        let spec = BlockSpec { q: 1.0, ..spec };
        let (xi, c) = build_block_config(&spec, 1).unwrap();
        assert_eq!(xi.total_particles(), 9 * 5);
        assert_eq!(c.total_particles(), 9);
        assert_eq!(xi.particles_in(spec.block_region()), 45);
    }

    #[test]
    fn blocks_tile_the_line() {
        let spec = BlockSpec::new(4, vec![1, 0, 2, 0], 3, 0.5);
        for k in -3..3 {
            assert_eq!(spec.block(k).hi + 1, spec.block(k + 1).lo);
        }
        assert_eq!(spec.eta_bar(2, spec.block(2).lo + 2), 2);
    }

    #[test]
    fn invalid_specs() {
        assert!(BlockSpec::new(3, vec![0, 0, 0], 2, 0.5).validate().is_err());
        assert!(BlockSpec::new(3, vec![1, 0], 2, 0.5).validate().is_err());
        assert!(BlockSpec::new(3, vec![1, 0, 0], 2, 1.5).validate().is_err());
    }

    #[test]
    fn empty_window_gives_empty_trace() {
        let spec = BlockSpec::new(5, vec![1; 5], 20, 0.0);
        let t = run_coupling(&spec, &p1(), 3, &CouplingOptions::new(0.3)).unwrap();
        assert!(t.steps.is_empty());
        assert!(!t.coarse_origin_visited);
        assert!(!t.block0_odometer_nonzero);
        assert!(t.completed());
    }

    /// A state with a single occupied block `k`.
    fn lone_block(k: i64, seed: u64) -> CouplingState {
        let spec = BlockSpec::new(5, vec![1; 5], 6, 0.0);
        let mut s = CouplingState::new(&spec, &p1(), 0.3, seed).unwrap();
        s.xi_prime.set(k, SiteContent::active(1)).unwrap();
        for x in spec.block(k).iter() {
            s.xi.set(x, SiteContent::active(1)).unwrap();
        }
        s
    }

    #[test]
    fn lone_block_good_and_bad_steps() {
        let (mut good, mut bad) = (false, false);
        for seed in 0..200 {
            let mut s = lone_block(3, seed);
            let r = match s.step() {
                Ok(r) => r.unwrap(),
                // heavy-tailed marches may run out of budget
                Err(Error::MarchBudgetExhausted { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let b3 = s.spec.block(3);
            match r.case {
                StepCase::Good => {
                    good = true;
                    assert_eq!(s.xi_prime.get(3), SiteContent::Sleeping);
                    assert!(s.xi.is_stable_in(b3));
                    assert_eq!(s.xi.particles_in(b3), 5);
                    assert_eq!(r.tau_prime_write, Some(Instruction::Sleep));
                }
                StepCase::Bad => {
                    bad = true;
                    assert_eq!(s.xi_prime.get(3), SiteContent::Empty);
                    assert_eq!(s.xi_prime.get(2), SiteContent::active(1));
                    let b2 = s.spec.block(2);
                    assert!(b2.iter().all(|x| s.xi.get(x) == SiteContent::active(1)));
                    assert_eq!(r.tau_prime_write, Some(Instruction::JumpLeft));
                    for m in -6..2 {
                        assert!(s.spec.block(m).iter().all(|x| s.h(x) == 0), "block {m} toppled");
                    }
                }
                StepCase::Multiplicity => unreachable!(),
            }
        }
        assert!(good && bad);
    }

    #[test]
    fn negative_side_marches_right() {
        for seed in 0..50 {
            let mut s = lone_block(-2, seed);
            let Ok(Some(r)) = s.step() else { continue };
            if r.case == StepCase::Bad {
                assert_eq!(r.tau_prime_write, Some(Instruction::JumpRight));
                assert_eq!(s.xi_prime.get(-1), SiteContent::active(1));
                return;
            }
        }
        panic!("no bad stabilization in 50 seeds");
    }

    #[test]
    fn march_of_a_particle_at_its_destination_is_free() {
        let spec = BlockSpec::new(1, vec![1], 3, 0.0);
        let mut s = CouplingState::new(&spec, &p1(), 0.3, 1).unwrap();
        s.xi.set(1, SiteContent::active(1)).unwrap();
        assert_eq!(s.forced_march(2, &[1]).unwrap(), 0);
        assert_eq!(s.tau.used_counts().count(), 0);
    }

    #[test]
    fn march_never_goes_inside_its_target() {
        let spec = BlockSpec::new(4, vec![2, 0, 1, 1], 4, 0.0);
        for seed in 0..40 {
            let mut s = CouplingState::new(&spec, &p1(), 0.3, seed).unwrap();
            let b3 = spec.block(3);
            for x in b3.iter() {
                s.xi.set(x, SiteContent::active(spec.eta_bar(3, x))).unwrap();
            }
            let particles: Vec<i64> = b3.iter().flat_map(|x| std::iter::repeat_n(x, spec.eta_bar(3, x) as usize)).collect();
            match s.forced_march(3, &particles) {
                Ok(_) => {}
                Err(Error::MarchBudgetExhausted { .. }) => continue,
                Err(e) => panic!("{e}"),
            }
            let b2 = spec.block(2);
            for x in b2.iter() {
                assert_eq!(s.xi.get(x).count(), spec.eta_bar(2, x));
            }
            assert_eq!(s.xi.total_particles(), 4);
            for x in s.spec.window().iter().filter(|&x| x < b2.lo) {
                assert_eq!(s.h(x), 0);
            }
        }
    }

    #[test]
    fn traces_satisfy_the_implication() {
        let spec = BlockSpec::new(3, vec![1, 1, 1], 8, 0.3);
        let batch = run_coupling_batch(&spec, &p1(), 60, 5, &CouplingOptions::new(0.3)).unwrap();
        let s = batch.summary();
        assert_eq!(s.invariant_violations, 0, "{:?}", batch.traces.iter().find(|t| t.invariant_violation));
        assert_eq!(s.implication_violations, 0);
        assert_eq!(s.jump_bound_violations, 0);
        assert!(s.completed > 0);
    }

    #[test]
    fn batch_is_reproducible() {
        let spec = BlockSpec::new(3, vec![1, 1, 1], 5, 0.4);
        let a = run_coupling_batch(&spec, &p1(), 10, 9, &CouplingOptions::new(0.3)).unwrap();
        let b = run_coupling_batch(&spec, &p1(), 10, 9, &CouplingOptions::new(0.3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_lines_have_the_documented_fields() {
        let spec = BlockSpec::new(3, vec![1, 1, 1], 5, 0.6);
        let t = run_coupling(&spec, &p1(), 4, &CouplingOptions::new(0.3)).unwrap();
        let text = t.to_json_lines();
        assert_eq!(text.lines().count(), t.steps.len() + 1);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["j", "k", "case", "tau_prime_write", "marched", "aborted_reason"] {
                assert!(v.get(key).is_some(), "{key} missing in {line}");
            }
        }
    }

    #[test]
    fn zero_offset_is_identity() {
        let spec = BlockSpec::new(5, vec![1, 2, 0, 1, 1], 3, 0.5);
        let (xi, _) = build_block_config(&spec, 2).unwrap();
        assert_eq!(translate(&xi, 0).unwrap(), xi);
        let moved = translate(&xi, 2).unwrap();
        assert_eq!(moved.get(3), xi.get(1));
    }

    #[test]
    fn all_good_traces_have_sleep_frequency_one() {
        let mut t = run_coupling(&BlockSpec::new(1, vec![1], 3, 0.0), &p1(), 1, &CouplingOptions::new(0.5)).unwrap();
        t.steps.push(StepRecord {
            j: 1,
            k: 2,
            case: StepCase::Good,
            tau_prime_write: Some(Instruction::Sleep),
            tau_prime_reads: 1,
            tau_prime_jump: None,
            marched: 0,
            block_topplings: 1,
        });
        let r = tau_prime_marginal_stats(&[t], Proportion::new(1, 1)).unwrap();
        assert_eq!(r.frequency.estimate, 1.0);
        assert!(r.consistent);
        let empty = run_coupling(&BlockSpec::new(1, vec![1], 3, 0.0), &p1(), 1, &CouplingOptions::new(0.5)).unwrap();
        assert!(matches!(
            tau_prime_marginal_stats(&[empty], Proportion::new(1, 2)),
            Err(Error::InsufficientSamples(_))
        ));
    }
}

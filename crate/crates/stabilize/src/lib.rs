//! Stabilization of finite regions under a killing boundary, plus the
//! no-man's-land and trapping constructions built on it.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use arw_core::{Config, Error, Instruction, InstructionArray, Interval, ModelParams, Odometer, Result, SiteContent};

pub mod nml;
pub mod trapping;

pub use nml::{escorted_stabilization, nml_report, stabilize_with_nml, strips, EscortReport, NmlOutcome};
pub use trapping::{
    negative_binomial_cdf, trap_in_buffer, trap_on_array, trap_success_probability, two_step_spread, SpreadOutcome,
    TrapOutcome,
};

pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Which unstable site to topple next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    LeftmostActive,
    RightmostActive,
    /// Smallest `|x|`, positive side first on ties.
    ClosestToOrigin,
    /// Uniform among unstable sites, driven by its own seed.
    SeededRandomActive(u64),
    /// Worklist order: topple a site until it is stable, then move on.
    /// The fastest choice and the default.
    QueueOrder,
}

#[derive(Debug, Clone)]
pub struct StabilizeRequest {
    pub initial: Config,
    /// Sites that must end stable (V). Topplings here are legal.
    pub target: Interval,
    /// Jumping out of this region kills the particle (W).
    pub kill_region: Interval,
    /// Jump-only strips of `W \ V` that must end empty.
    pub no_sleep: Vec<Interval>,
    pub strategy: Strategy,
    /// Maximum number of topplings.
    pub budget: u64,
    /// Stop as soon as this many particles have been killed. Since the
    /// number of exits only grows along a legal sequence, a run stopped
    /// this way certifies `M >= stop_after_exits`.
    pub stop_after_exits: Option<u64>,
}

impl StabilizeRequest {
    /// Stabilize `initial` in `target`, killing particles that leave it.
    pub fn new(initial: Config, target: Interval) -> Self {
        StabilizeRequest {
            initial,
            target,
            kill_region: target,
            no_sleep: Vec::new(),
            strategy: Strategy::QueueOrder,
            budget: DEFAULT_BUDGET,
            stop_after_exits: None,
        }
    }

    pub fn stop_after_exits(mut self, exits: u64) -> Self {
        self.stop_after_exits = Some(exits);
        self
    }

    pub fn kill_region(mut self, w: Interval) -> Self {
        self.kill_region = w;
        self
    }

    pub fn no_sleep(mut self, zone: Interval) -> Self {
        if !zone.is_empty() {
            self.no_sleep.push(zone);
        }
        self
    }

    pub fn strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.kill_region.contains_interval(&self.target) {
            return Err(Error::InvalidParams(format!(
                "target {} is not inside kill region {}",
                self.target, self.kill_region
            )));
        }
        for z in &self.no_sleep {
            if !self.kill_region.contains_interval(z) || z.intersects(&self.target) {
                return Err(Error::InvalidParams(format!(
                    "no-sleep zone {z} must lie in {} outside {}",
                    self.kill_region, self.target
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationReport {
    pub final_config: Config,
    /// Topplings per site during this run.
    pub odometer: Odometer,
    /// Particles killed, i.e. that jumped out of the kill region.
    pub exits_total: u64,
    pub exits_left: u64,
    pub exits_right: u64,
    /// Jumps from the target region to the outside, per side. Equal to the
    /// exits when the kill region is the target itself.
    pub escapes_left: u64,
    pub escapes_right: u64,
    pub topplings: u64,
    pub truncated: bool,
    /// The run ended early because `stop_after_exits` was reached.
    pub stopped_early: bool,
}

/// Set of sites waiting to be toppled, ordered according to a strategy.
enum Frontier {
    Stack(Vec<i64>),
    Ordered {
        set: BTreeSet<(i64, i64)>,
        key: fn(i64) -> i64,
    },
    Random {
        sites: Vec<i64>,
        pos: Vec<u32>,
        lo: i64,
        rng: Box<ChaCha8Rng>,
    },
}

const ABSENT: u32 = u32::MAX;

fn key_left(x: i64) -> i64 {
    x
}

fn key_right(x: i64) -> i64 {
    -x
}

fn key_origin(x: i64) -> i64 {
    // |x| first, then positive before negative
    2 * x.abs() + i64::from(x < 0)
}

impl Frontier {
    fn new(strategy: Strategy, window: Interval) -> Self {
        match strategy {
            Strategy::QueueOrder => Frontier::Stack(Vec::new()),
            Strategy::LeftmostActive => Frontier::Ordered {
                set: BTreeSet::new(),
                key: key_left,
            },
            Strategy::RightmostActive => Frontier::Ordered {
                set: BTreeSet::new(),
                key: key_right,
            },
            Strategy::ClosestToOrigin => Frontier::Ordered {
                set: BTreeSet::new(),
                key: key_origin,
            },
            Strategy::SeededRandomActive(seed) => Frontier::Random {
                sites: Vec::new(),
                pos: vec![ABSENT; window.len() as usize],
                lo: window.lo,
                rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
            },
        }
    }

    fn insert(&mut self, x: i64) {
        match self {
            Frontier::Stack(v) => v.push(x),
            Frontier::Ordered { set, key } => {
                set.insert((key(x), x));
            }
            Frontier::Random { sites, pos, lo, .. } => {
                let i = (x - *lo) as usize;
                if pos[i] == ABSENT {
                    pos[i] = sites.len() as u32;
                    sites.push(x);
                }
            }
        }
    }

    fn remove(&mut self, x: i64) {
        match self {
            Frontier::Stack(_) => {}
            Frontier::Ordered { set, key } => {
                set.remove(&(key(x), x));
            }
            Frontier::Random { sites, pos, lo, .. } => {
                let i = (x - *lo) as usize;
                let p = pos[i];
                if p != ABSENT {
                    let last = sites.pop().expect("non-empty");
                    if last != x {
                        sites[p as usize] = last;
                        pos[(last - *lo) as usize] = p;
                    }
                    pos[i] = ABSENT;
                }
            }
        }
    }

    /// Next site to look at. Stack entries may be stale; the caller checks.
    fn choose(&mut self) -> Option<i64> {
        match self {
            Frontier::Stack(v) => v.pop(),
            Frontier::Ordered { set, .. } => set.first().map(|&(_, x)| x),
            Frontier::Random { sites, rng, .. } => {
                if sites.is_empty() {
                    None
                } else {
                    Some(sites[rng.random_range(0..sites.len())])
                }
            }
        }
    }

    fn is_stack(&self) -> bool {
        matches!(self, Frontier::Stack(_))
    }
}

// zone tags
const FROZEN: u8 = 0;
const TARGET: u8 = 1;
const STRIP: u8 = 2;

#[inline]
fn unstable(zone: u8, s: SiteContent) -> bool {
    match zone {
        TARGET => s.is_active(),
        STRIP => s != SiteContent::Empty,
        _ => false,
    }
}

/// Stabilize according to `request`, reading instructions from `array`.
///
/// Sites outside the target and the no-sleep zones are never toppled;
/// particles landing there stay put. Running out of budget is not an
/// error: the report comes back with `truncated` set.
pub fn stabilize(request: &StabilizeRequest, array: &mut InstructionArray) -> Result<StabilizationReport> {
    run(request, array, false, |_, _| Ok(()))
}

/// As [`stabilize`], calling `observe(site, config)` after every toppling.
/// An error from the observer aborts the run.
pub fn stabilize_observed<F>(
    request: &StabilizeRequest,
    array: &mut InstructionArray,
    observe: F,
) -> Result<StabilizationReport>
where
    F: FnMut(i64, &Config) -> Result<()>,
{
    run(request, array, true, observe)
}

fn run<F>(
    request: &StabilizeRequest,
    array: &mut InstructionArray,
    observed: bool,
    mut observe: F,
) -> Result<StabilizationReport>
where
    F: FnMut(i64, &Config) -> Result<()>,
{
    request.validate()?;
    for z in &request.no_sleep {
        array.set_jump_only(*z)?;
    }
    if !observed && request.strategy == Strategy::QueueOrder && !array.has_overrides() {
        return run_fast(request, array);
    }
    let init = &request.initial;
    let iw = init.window();
    let window = working_window(request);
    let mut config = if window == iw { init.clone() } else { init.rewindow(window)? };
    let lo = window.lo;
    let w = request.kill_region;
    let v = request.target;

    let mut zone = vec![FROZEN; window.len() as usize];
    for x in v.iter() {
        zone[(x - lo) as usize] = TARGET;
    }
    for z in &request.no_sleep {
        for x in z.iter() {
            zone[(x - lo) as usize] = STRIP;
        }
    }

    let mut frontier = Frontier::new(request.strategy, window);
    {
        let sites = config.sites();
        // pushed right to left so the stack pops the leftmost site first
        for i in (0..sites.len()).rev() {
            if unstable(zone[i], sites[i]) {
                frontier.insert(lo + i as i64);
            }
        }
    }

    let mut odo = vec![0u32; window.len() as usize];
    let (mut exits_left, mut exits_right) = (0u64, 0u64);
    let (mut escapes_left, mut escapes_right) = (0u64, 0u64);
    let mut topplings = 0u64;
    let mut truncated = false;
    let stack = frontier.is_stack();
    let stop = request.stop_after_exits.unwrap_or(u64::MAX);
    let mut stopped_early = stop == 0;

    'outer: while let Some(x) = frontier.choose() {
        if stopped_early {
            break;
        }
        let i = (x - lo) as usize;
        let mut cursor = array.cursor(x);
        let mut result = Ok(());
        loop {
            let s = config.sites()[i];
            if !unstable(zone[i], s) {
                frontier.remove(x);
                break;
            }
            if topplings >= request.budget {
                truncated = true;
                break;
            }
            let instr = match array.draw(&mut cursor) {
                Ok(instr) => instr,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            };
            topplings += 1;
            // strip sites are jump-only, so a sleeping particle there can only
            // come from the initial configuration; an acceptable toppling wakes it
            let count = s.count();
            match instr {
                Instruction::Sleep => {
                    if count == 1 {
                        config.sites_mut()[i] = SiteContent::Sleeping;
                    }
                }
                _ => {
                    let dest = x + instr.step();
                    config.sites_mut()[i] = SiteContent::active(count - 1);
                    if zone[i] == TARGET && !v.contains(dest) {
                        if dest < x {
                            escapes_left += 1;
                        } else {
                            escapes_right += 1;
                        }
                    }
                    if !w.contains(dest) {
                        config.killed += 1;
                        if dest < x {
                            exits_left += 1;
                        } else {
                            exits_right += 1;
                        }
                        if exits_left + exits_right >= stop {
                            stopped_early = true;
                            array.commit(&cursor);
                            odo[i] += cursor.used - cursor.start;
                            cursor = array.cursor(x);
                            result = observe(x, &config);
                            break;
                        }
                    } else {
                        let j = (dest - lo) as usize;
                        let before = config.sites()[j];
                        let after = before.with_arrival();
                        config.sites_mut()[j] = after;
                        if !unstable(zone[j], before) && unstable(zone[j], after) {
                            frontier.insert(dest);
                        }
                    }
                }
            }
            if !stack {
                // ordered strategies re-choose after every toppling
                if !unstable(zone[i], config.sites()[i]) {
                    frontier.remove(x);
                }
                array.commit(&cursor);
                odo[i] += cursor.used - cursor.start;
                cursor = array.cursor(x);
                result = observe(x, &config);
                break;
            }
            if observed {
                array.commit(&cursor);
                odo[i] += cursor.used - cursor.start;
                cursor = array.cursor(x);
                result = observe(x, &config);
                if result.is_err() {
                    break;
                }
            }
        }
        array.commit(&cursor);
        odo[i] += cursor.used - cursor.start;
        result?;
        if truncated {
            break 'outer;
        }
    }

    let mut odometer = Odometer::new();
    for (i, &c) in odo.iter().enumerate() {
        odometer.add(lo + i as i64, c);
    }
    Ok(StabilizationReport {
        final_config: config,
        odometer,
        exits_total: exits_left + exits_right,
        exits_left,
        exits_right,
        escapes_left,
        escapes_right,
        topplings,
        truncated,
        stopped_early,
    })
}

/// Hull of the initial window and the kill region.
fn working_window(request: &StabilizeRequest) -> Interval {
    let iw = request.initial.window();
    if iw.is_empty() {
        request.kill_region
    } else {
        Interval::new(iw.lo.min(request.kill_region.lo), iw.hi.max(request.kill_region.hi))
    }
}

// Site encoding of the fast path: -1 sleeping, 0 empty, k > 0 active.
const ASLEEP: i32 = -1;

fn encode(s: SiteContent) -> i32 {
    match s {
        SiteContent::Empty => 0,
        SiteContent::Sleeping => ASLEEP,
        SiteContent::Active(k) => k as i32,
    }
}

fn decode(v: i32) -> SiteContent {
    match v {
        ASLEEP => SiteContent::Sleeping,
        k => SiteContent::active(k as u32),
    }
}

/// Stabilization on flat arrays that follows the moving particle: after a
/// jump the destination is toppled next if it became unstable, and sites
/// left behind unstable go on a stack. Every toppling is legal in the
/// target and acceptable in the strips, as in the general loop.
fn run_fast(request: &StabilizeRequest, array: &mut InstructionArray) -> Result<StabilizationReport> {
    let window = working_window(request);
    // one sentinel site on each side of the window
    let lo = window.lo - 1;
    let len = window.len() as usize + 2;
    let w = request.kill_region;
    let v = request.target;

    let mut state = vec![0i32; len];
    for (x, s) in request.initial.window().iter().zip(request.initial.sites()) {
        state[(x - lo) as usize] = encode(*s);
    }
    let mut zone = vec![Z_FROZEN; len];
    for x in v.iter() {
        zone[(x - lo) as usize] = Z_TARGET;
    }
    for z in &request.no_sleep {
        for x in z.iter() {
            zone[(x - lo) as usize] = Z_STRIP;
        }
    }
    zone[(w.lo - 1 - lo) as usize] = Z_KILL_LEFT;
    zone[(w.hi + 1 - lo) as usize] = Z_KILL_RIGHT;
    let unstable = |z: u8, s: i32| (z == Z_TARGET && s > 0) || (z == Z_STRIP && s != 0);

    let mut cursors: Vec<_> = (0..len as i64).map(|i| array.cursor(lo + i)).collect();
    let mut in_stack = vec![false; len];
    let mut stack: Vec<usize> = Vec::new();
    for i in (0..len).rev() {
        if unstable(zone[i], state[i]) {
            stack.push(i);
            in_stack[i] = true;
        }
    }

    // exits and escapes, indexed by side (0 left, 1 right)
    let mut exits = [0u64; 2];
    let mut escapes = [0u64; 2];
    let mut topplings = 0u64;
    let mut truncated = false;
    let mut failure = None;
    let stop = request.stop_after_exits.unwrap_or(u64::MAX);
    let mut stopped_early = stop == 0;

    let next = |stack: &mut Vec<usize>, in_stack: &mut [bool], state: &[i32]| {
        while let Some(i) = stack.pop() {
            in_stack[i] = false;
            if unstable(zone[i], state[i]) {
                return Some(i);
            }
        }
        None
    };
    let mut here = next(&mut stack, &mut in_stack, &state);
    if stopped_early {
        here = None;
    }
    while let Some(i) = here {
        if topplings >= request.budget {
            truncated = true;
            if !in_stack[i] {
                stack.push(i);
            }
            break;
        }
        let instr = match array.draw(&mut cursors[i]) {
            Ok(instr) => instr,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        topplings += 1;
        let s = state[i];
        if instr == Instruction::Sleep {
            if s == 1 {
                state[i] = ASLEEP;
                here = next(&mut stack, &mut in_stack, &state);
            }
            continue;
        }
        // a strip site may start with a sleeping particle; toppling wakes it
        let left = s.max(1) - 1;
        state[i] = left;
        let zi = zone[i];
        if left != 0 && !in_stack[i] && unstable(zi, left) {
            stack.push(i);
            in_stack[i] = true;
        }
        let right = instr == Instruction::JumpRight;
        let j = if right { i + 1 } else { i - 1 };
        let zj = zone[j];
        if zi == Z_TARGET && zj != Z_TARGET {
            escapes[right as usize] += 1;
        }
        if zj >= Z_KILL_LEFT {
            exits[right as usize] += 1;
            if exits[0] + exits[1] >= stop {
                stopped_early = true;
                break;
            }
            here = next(&mut stack, &mut in_stack, &state);
            continue;
        }
        let before = state[j];
        let after = before + 1 + 2 * (before < 0) as i32;
        state[j] = after;
        here = if unstable(zj, after) {
            Some(j)
        } else {
            next(&mut stack, &mut in_stack, &state)
        };
    }

    let mut odometer = Odometer::new();
    for c in &cursors {
        array.commit(c);
        odometer.add(c.site, c.used - c.start);
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let mut final_config = Config::empty(window);
    final_config.killed = request.initial.killed + exits[0] + exits[1];
    for (slot, &s) in final_config.sites_mut().iter_mut().zip(&state[1..len - 1]) {
        *slot = decode(s);
    }
    Ok(StabilizationReport {
        final_config,
        odometer,
        exits_total: exits[0] + exits[1],
        exits_left: exits[0],
        exits_right: exits[1],
        escapes_left: escapes[0],
        escapes_right: escapes[1],
        topplings,
        truncated,
        stopped_early,
    })
}

const Z_FROZEN: u8 = 0;
const Z_TARGET: u8 = 1;
const Z_STRIP: u8 = 2;
const Z_KILL_LEFT: u8 = 3;
const Z_KILL_RIGHT: u8 = 4;

/// Check that `eta` has particles only inside `region`.
pub fn check_support(eta: &Config, region: Interval) -> Result<()> {
    for (i, s) in eta.sites().iter().enumerate() {
        let x = eta.window().lo + i as i64;
        if *s != SiteContent::Empty && !region.contains(x) {
            return Err(Error::InvalidParams(format!(
                "initial configuration has particles at {x}, outside {region}"
            )));
        }
    }
    Ok(())
}

/// Stabilize `eta` in `V_n` with killing at the boundary, reading a fresh
/// array with seed `seed`.
pub fn exit_count_report(
    eta: &Config,
    n: u64,
    params: &ModelParams,
    seed: u64,
    budget: u64,
) -> Result<StabilizationReport> {
    let v = Interval::segment(n);
    check_support(eta, v)?;
    let mut array = InstructionArray::new(params, seed);
    let report = stabilize(&StabilizeRequest::new(eta.clone(), v).budget(budget), &mut array)?;
    if report.truncated {
        return Err(Error::BudgetExhausted { budget });
    }
    Ok(report)
}

/// `M_n`: the number of particles that jump out of `V_n` while `eta` is
/// stabilized there.
pub fn exit_count(eta: &Config, n: u64, params: &ModelParams, seed: u64) -> Result<u64> {
    exit_count_report(eta, n, params, seed, DEFAULT_BUDGET).map(|r| r.exits_total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1() -> ModelParams {
        ModelParams::symmetric(1.0).unwrap()
    }

    fn flat(n: u64, k: u32) -> Config {
        let v = Interval::segment(n);
        Config::from_counts(v, v.lo, &vec![k; n as usize]).unwrap()
    }

    #[test]
    fn empty_configuration_needs_nothing() {
        let v = Interval::segment(10);
        let mut a = InstructionArray::new(&p1(), 1);
        let r = stabilize(&StabilizeRequest::new(Config::empty(v), v), &mut a).unwrap();
        assert_eq!(r.exits_total, 0);
        assert_eq!(r.topplings, 0);
        assert!(r.odometer.is_zero());
    }

    #[test]
    fn strategies_agree() {
        let eta = flat(12, 2);
        let v = Interval::segment(12);
        let mut reports = Vec::new();
        for s in [
            Strategy::QueueOrder,
            Strategy::LeftmostActive,
            Strategy::RightmostActive,
            Strategy::ClosestToOrigin,
            Strategy::SeededRandomActive(77),
        ] {
            let mut a = InstructionArray::new(&p1(), 99);
            let mut r = stabilize(&StabilizeRequest::new(eta.clone(), v).strategy(s), &mut a).unwrap();
            r.topplings = 0;
            reports.push(r);
        }
        for r in &reports[1..] {
            assert_eq!(r, &reports[0]);
        }
    }

    #[test]
    fn report_is_consistent() {
        let eta = flat(20, 3);
        let v = Interval::segment(20);
        let mut a = InstructionArray::new(&p1(), 4);
        let r = stabilize(&StabilizeRequest::new(eta.clone(), v), &mut a).unwrap();
        assert!(!r.truncated);
        assert!(r.final_config.is_stable_in(v));
        assert_eq!(r.exits_total, r.final_config.killed);
        assert_eq!(r.final_config.total_particles() + r.exits_total, 60);
        assert_eq!(r.topplings, r.odometer.total());
        for (x, c) in r.odometer.iter() {
            assert_eq!(a.used(x), c);
        }
    }

    #[test]
    fn budget_truncates() {
        let eta = flat(20, 3);
        let v = Interval::segment(20);
        let mut a = InstructionArray::new(&p1(), 4);
        let r = stabilize(&StabilizeRequest::new(eta.clone(), v).budget(10), &mut a).unwrap();
        assert!(r.truncated);
        assert_eq!(r.topplings, 10);
        assert!(matches!(
            exit_count_report(&eta, 20, &p1(), 4, 10),
            Err(Error::BudgetExhausted { budget: 10 })
        ));
    }

    #[test]
    fn no_sleep_strips_end_empty() {
        let eta = flat(10, 2);
        let v = Interval::segment(10);
        let w = v.widen(5, 5);
        let req = StabilizeRequest::new(eta, v)
            .kill_region(w)
            .no_sleep(Interval::new(w.lo, v.lo - 1))
            .no_sleep(Interval::new(v.hi + 1, w.hi));
        let mut a = InstructionArray::new(&p1(), 8);
        let r = stabilize(&req, &mut a).unwrap();
        assert!(r.final_config.is_stable_in(v));
        assert!(r.final_config.is_empty_in(Interval::new(w.lo, v.lo - 1)));
        assert!(r.final_config.is_empty_in(Interval::new(v.hi + 1, w.hi)));
        assert_eq!(r.final_config.total_particles() + r.exits_total, 20);
    }

    #[test]
    fn frozen_sites_are_not_toppled() {
        let eta = flat(6, 2);
        let v = Interval::segment(6);
        let w = v.widen(3, 3);
        let mut a = InstructionArray::new(&p1(), 12);
        let r = stabilize(&StabilizeRequest::new(eta, v).kill_region(w), &mut a).unwrap();
        assert!(r.odometer.iter().all(|(x, _)| v.contains(x)));
        let outside = r.final_config.total_particles() - r.final_config.particles_in(v);
        assert_eq!(outside, r.escapes_left + r.escapes_right - r.exits_total);
    }

    #[test]
    fn support_outside_segment_is_rejected() {
        let c = Config::from_counts(Interval::new(-5, 5), 4, &[1]).unwrap();
        assert!(exit_count(&c, 4, &p1(), 0).is_err());
    }
}

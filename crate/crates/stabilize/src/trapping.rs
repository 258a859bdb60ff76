//! Trapping exited particles in a buffer, and the two-step spread
//! construction built on it.

use serde::{Deserialize, Serialize};

use arw_core::{Config, Error, Instruction, InstructionArray, Interval, ModelParams, Result, Side};

use crate::nml::strips;
use crate::{check_support, stabilize, StabilizeRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapOutcome {
    pub success: bool,
    /// Jump instructions read, i.e. the sum of the geometric advances.
    pub jumps_used: u64,
    /// Buffer slots occupied by resting particles.
    pub rested: u64,
}

/// Settle `k` particles one after another in the `ell` buffer sites that
/// follow `start` outward (`start` excluded) in direction `side`.
///
/// Each particle enters at the slot after the previous particle's resting
/// place and reads the first instruction of each fresh site it visits: a
/// jump moves it one slot outward, a sleep makes it rest. So particle `j`
/// advances `G_j` times, and all `k` fit iff `sum (G_j + 1) <= ell`.
pub fn trap_on_array(
    array: &mut InstructionArray,
    start: i64,
    side: Side,
    k: u64,
    ell: u64,
) -> Result<TrapOutcome> {
    let dir = match side {
        Side::Left => -1,
        Side::Right => 1,
    };
    let mut slot = 0u64;
    let mut jumps = 0u64;
    for j in 0..k {
        slot += 1;
        loop {
            if slot > ell {
                return Ok(TrapOutcome {
                    success: false,
                    jumps_used: jumps,
                    rested: j,
                });
            }
            let site = start + dir * slot as i64;
            if array.used(site) != 0 {
                return Err(Error::InvalidParams(format!(
                    "trapping buffer site {site} is not fresh"
                )));
            }
            if array.next_instruction(site)? == Instruction::Sleep {
                break;
            }
            jumps += 1;
            slot += 1;
        }
    }
    Ok(TrapOutcome {
        success: true,
        jumps_used: jumps,
        rested: k,
    })
}

/// [`trap_on_array`] on a fresh array, with the buffer at sites `1..=ell`
/// (right) or `-1..=-ell` (left).
pub fn trap_in_buffer(k: u64, ell: u64, side: Side, params: &ModelParams, seed: u64) -> Result<TrapOutcome> {
    let mut array = InstructionArray::new(params, seed);
    trap_on_array(&mut array, 0, side, k, ell)
}

/// `P(G_1 + ... + G_k <= m)` for i.i.d. geometric `G` on `{0, 1, ...}`
/// with success probability `p`: the negative binomial distribution
/// function, summed term by term. Zero for negative `m`.
pub fn negative_binomial_cdf(k: u64, m: i64, p: f64) -> f64 {
    if m < 0 {
        return 0.0;
    }
    if k == 0 {
        return 1.0;
    }
    let q = 1.0 - p;
    // term(s) = C(s + k - 1, k - 1) p^k q^s
    let mut term = p.powi(k as i32);
    let mut total = term;
    for s in 1..=m as u64 {
        term *= q * (s + k - 1) as f64 / s as f64;
        total += term;
    }
    total.min(1.0)
}

/// Success probability of [`trap_in_buffer`]: `P(sum G_j <= ell - k)`.
pub fn trap_success_probability(k: u64, ell: u64, params: &ModelParams) -> f64 {
    negative_binomial_cdf(k, ell as i64 - k as i64, params.sleep_probability())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpreadOutcome {
    /// Both steps succeeded: no particle left `V_{n+4ell}`.
    pub no_exit_enlarged: bool,
    /// Particles that left `V_{n+2ell}` in the first step.
    pub m_prime: u64,
    pub exits_left: u64,
    pub exits_right: u64,
    pub trap_left: TrapOutcome,
    pub trap_right: TrapOutcome,
}

/// The two-step construction on one array.
///
/// Step 1 stabilizes `eta` in `V_n` with jump-only strips filling
/// `V_{n+2ell} \ V_n`, killing at the boundary of `V_{n+2ell}`. Step 2
/// traps the particles that left on each side in the fresh buffers
/// `V_{n+4ell} \ V_{n+2ell}`. Trapped particles only move outward, so
/// they never re-enter `V_n`.
pub fn two_step_spread(eta: &Config, n: u64, ell: u64, params: &ModelParams, seed: u64, budget: u64) -> Result<SpreadOutcome> {
    let v = Interval::segment(n);
    check_support(eta, v)?;
    let mid = Interval::segment(n + 2 * ell);
    let (left, right) = strips(v, mid);
    let req = StabilizeRequest::new(eta.clone(), v)
        .kill_region(mid)
        .no_sleep(left)
        .no_sleep(right)
        .budget(budget);
    let mut array = InstructionArray::new(params, seed);
    let report = stabilize(&req, &mut array)?;
    if report.truncated {
        return Err(Error::BudgetExhausted { budget });
    }
    let trap_left = trap_on_array(&mut array, mid.lo, Side::Left, report.exits_left, ell)?;
    let trap_right = trap_on_array(&mut array, mid.hi, Side::Right, report.exits_right, ell)?;
    Ok(SpreadOutcome {
        no_exit_enlarged: trap_left.success && trap_right.success,
        m_prime: report.exits_total,
        exits_left: report.exits_left,
        exits_right: report.exits_right,
        trap_left,
        trap_right,
    })
}

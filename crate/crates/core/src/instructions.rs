//! Lazily evaluated instruction stacks.
//!
//! The instruction at `(site, index)` is a pure function of the array seed,
//! the site and the index, so a stack is "materialized" the moment it is
//! looked at and reads never depend on the order in which sites are visited.
//! What the array does track is how far each stack has been consumed (the
//! odometer), how far it has been inspected, which sites are jump-only, and a
//! sparse set of overrides.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{DenseMap, Interval};
use crate::model::ModelParams;
use crate::seed::mix;

pub const DEFAULT_DEPTH_CAP: u32 = 10_000_000;

const ONE: u64 = 1 << 53;

/// Instructions per memoized block.
const BLOCK: u32 = 32;

/// Consumed count of one stack plus the block of instructions around it,
/// packed two bits each (0 sleep, 1 right, 2 left).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct StackState {
    used: u32,
    /// Index of the first instruction in `bits`; 0 when nothing is cached.
    base: u32,
    bits: u64,
}

/// `u < p` for `u = (w >> 11) / 2^53` is `(w >> 11) < threshold(p)`.
fn threshold(p: f64) -> u64 {
    (p.clamp(0.0, 1.0) * ONE as f64).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Sleep,
    JumpLeft,
    JumpRight,
}

impl Instruction {
    /// Displacement of a jump, 0 for a sleep instruction.
    #[inline]
    pub fn step(self) -> i64 {
        match self {
            Instruction::Sleep => 0,
            Instruction::JumpLeft => -1,
            Instruction::JumpRight => 1,
        }
    }

    pub fn is_sleep(self) -> bool {
        self == Instruction::Sleep
    }
}

/// Law of the non-sleep instructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JumpLaw {
    /// Nearest-neighbour jumps, right with probability `p_right`.
    Nearest { p_right: f64 },
    /// Jumps pointing toward 0 (rightward at 0 itself).
    TowardOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteMode {
    Normal,
    JumpOnly,
}

#[derive(Debug, Clone)]
pub struct InstructionArray {
    seed: u64,
    key: u64,
    sleep_prob: f64,
    law: JumpLaw,
    // thresholds on the top 53 bits of the instruction word
    t_sleep: u64,
    t_right: u64,
    t_jump_only_right: u64,
    stacks: DenseMap<StackState>,
    peeked: DenseMap<u32>,
    jump_only: Vec<Interval>,
    overrides: HashMap<(i64, u32), Instruction>,
    override_log: Vec<(i64, u32, Instruction)>,
    depth_cap: u32,
}

impl InstructionArray {
    /// Array for the walk with parameters `params`.
    pub fn new(params: &ModelParams, seed: u64) -> Self {
        Self::with_law(
            params.sleep_probability(),
            JumpLaw::Nearest {
                p_right: params.p_right,
            },
            seed,
        )
    }

    /// Array whose fresh instructions are `Sleep` with probability
    /// `sleep_prob` and otherwise follow `law`.
    pub fn with_law(sleep_prob: f64, law: JumpLaw, seed: u64) -> Self {
        assert!(
            (0.0..=1.0).contains(&sleep_prob),
            "sleep probability {sleep_prob} outside [0, 1]"
        );
        let p_right = match law {
            JumpLaw::Nearest { p_right } => p_right,
            JumpLaw::TowardOrigin => 1.0,
        };
        InstructionArray {
            seed,
            key: mix(seed),
            sleep_prob,
            law,
            t_sleep: threshold(sleep_prob),
            t_right: if p_right >= 1.0 {
                ONE
            } else {
                threshold(sleep_prob + (1.0 - sleep_prob) * p_right)
            },
            t_jump_only_right: threshold(p_right),
            stacks: DenseMap::new(),
            peeked: DenseMap::new(),
            jump_only: Vec::new(),
            overrides: HashMap::new(),
            override_log: Vec::new(),
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sleep_probability(&self) -> f64 {
        self.sleep_prob
    }

    pub fn law(&self) -> JumpLaw {
        self.law
    }

    pub fn depth_cap(&self) -> u32 {
        self.depth_cap
    }

    pub fn set_depth_cap(&mut self, cap: u32) {
        self.depth_cap = cap;
    }

    /// Number of instructions consumed at `site`.
    #[inline]
    pub fn used(&self, site: i64) -> u32 {
        self.stacks.get(site).used
    }

    /// Consumed counts of all sites with at least one consumed instruction.
    pub fn used_counts(&self) -> impl Iterator<Item = (i64, u32)> + '_ {
        self.stacks
            .nonzero()
            .filter(|(_, st)| st.used > 0)
            .map(|(x, st)| (x, st.used))
    }

    pub fn mode(&self, site: i64) -> SiteMode {
        if self.jump_only.iter().any(|r| r.contains(site)) {
            SiteMode::JumpOnly
        } else {
            SiteMode::Normal
        }
    }

    /// Switch every site of `region` to jump-only stacks. Allowed only for
    /// stacks nobody has read yet.
    pub fn set_jump_only(&mut self, region: Interval) -> Result<()> {
        if region.is_empty() || self.jump_only.iter().any(|r| r.contains_interval(&region)) {
            return Ok(());
        }
        for x in region.iter() {
            if self.mode(x) == SiteMode::Normal && (self.used(x) > 0 || self.peeked.get(x) > 0) {
                return Err(Error::ModeAfterRead { site: x });
            }
        }
        self.jump_only.push(region);
        Ok(())
    }

    /// Replace the instruction at `(site, index)`. The slot must be strictly
    /// beyond everything consumed or peeked at that site.
    pub fn install_override(&mut self, site: i64, index: u32, instr: Instruction) -> Result<()> {
        if index == 0 || index <= self.used(site) || index <= self.peeked.get(site) {
            return Err(Error::OverrideAfterRead { site, index });
        }
        self.overrides.insert((site, index), instr);
        self.override_log.push((site, index, instr));
        Ok(())
    }

    pub fn has_overrides(&self) -> bool {
        !self.overrides.is_empty()
    }

    /// Every override installed so far, in installation order.
    pub fn override_log(&self) -> &[(i64, u32, Instruction)] {
        &self.override_log
    }

    pub fn override_at(&self, site: i64, index: u32) -> Option<Instruction> {
        self.overrides.get(&(site, index)).copied()
    }

    /// The sampled instruction at `(site, index)`, ignoring overrides.
    /// A pure function of the seed, the site mode and the coordinates.
    pub fn fresh_instruction(&self, site: i64, index: u32) -> Instruction {
        let c = self.cursor(site);
        self.decode(site, self.code(&c, index))
    }

    /// Two-bit code of the sampled instruction `index` under cursor `c`.
    #[inline(always)]
    fn code(&self, c: &Cursor, index: u32) -> u64 {
        let u = mix(c.key.wrapping_add(index as u64)) >> 11;
        if c.jump_only {
            1 + (u >= self.t_jump_only_right) as u64
        } else {
            (u >= self.t_sleep) as u64 + (u >= self.t_right) as u64
        }
    }

    #[inline(always)]
    fn decode(&self, site: i64, code: u64) -> Instruction {
        if code == 0 {
            return Instruction::Sleep;
        }
        match self.law {
            JumpLaw::Nearest { .. } => {
                if code == 1 {
                    Instruction::JumpRight
                } else {
                    Instruction::JumpLeft
                }
            }
            JumpLaw::TowardOrigin => {
                if site > 0 {
                    Instruction::JumpLeft
                } else {
                    Instruction::JumpRight
                }
            }
        }
    }

    /// Read position at `site`, for consuming a run of instructions there
    /// without touching the array until [`InstructionArray::commit`].
    #[inline]
    pub fn cursor(&self, site: i64) -> Cursor {
        let st = self.stacks.get(site);
        Cursor {
            site,
            key: mix(self.key ^ site as u64),
            used: st.used,
            start: st.used,
            base: st.base,
            bits: st.bits,
            jump_only: !self.jump_only.is_empty() && self.mode(site) == SiteMode::JumpOnly,
        }
    }

    #[inline(never)]
    fn refill(&self, c: &mut Cursor, index: u32) {
        let base = ((index - 1) & !(BLOCK - 1)) + 1;
        let mut bits = 0u64;
        for j in 0..BLOCK {
            bits |= self.code(c, base + j) << (2 * j);
        }
        c.base = base;
        c.bits = bits;
    }

    /// Consume the next instruction at the cursor.
    #[inline(always)]
    pub fn draw(&self, c: &mut Cursor) -> Result<Instruction> {
        let index = c.used + 1;
        if index > self.depth_cap {
            return Err(Error::DepthCap {
                site: c.site,
                cap: self.depth_cap,
            });
        }
        c.used = index;
        if !self.overrides.is_empty() {
            if let Some(&instr) = self.overrides.get(&(c.site, index)) {
                return Ok(instr);
            }
        }
        if c.base == 0 || index.wrapping_sub(c.base) >= BLOCK {
            self.refill(c, index);
        }
        let code = (c.bits >> (2 * (index - c.base))) & 3;
        Ok(self.decode(c.site, code))
    }

    /// Record what a cursor consumed.
    #[inline]
    pub fn commit(&mut self, c: &Cursor) {
        if c.used != c.start {
            *self.stacks.get_mut(c.site) = StackState {
                used: c.used,
                base: c.base,
                bits: c.bits,
            };
        }
    }

    /// Effective instruction at `(site, index)` without recording the read.
    pub(crate) fn instruction_at(&self, site: i64, index: u32) -> Result<Instruction> {
        let mut c = self.cursor(site);
        c.used = index - 1;
        self.draw(&mut c)
    }

    /// Read the instruction at `(site, index)`, `index >= 1`. Reading fixes
    /// the slot: later overrides at or below a peeked index are refused.
    pub fn peek_instruction(&mut self, site: i64, index: u32) -> Result<Instruction> {
        assert!(index >= 1, "instruction indices start at 1");
        let instr = self.instruction_at(site, index)?;
        let p = self.peeked.get_mut(site);
        *p = (*p).max(index);
        Ok(instr)
    }

    /// The instruction that the next toppling of `site` would consume.
    pub fn upcoming(&self, site: i64) -> Result<Instruction> {
        self.instruction_at(site, self.used(site) + 1)
    }

    /// Mark the next instruction of `site` consumed.
    pub(crate) fn advance(&mut self, site: i64) {
        self.stacks.get_mut(site).used += 1;
    }

    /// Consume and return the next instruction of `site`.
    pub fn next_instruction(&mut self, site: i64) -> Result<Instruction> {
        let mut c = self.cursor(site);
        let instr = self.draw(&mut c)?;
        self.commit(&c);
        Ok(instr)
    }
}

/// Consumption state of one stack, see [`InstructionArray::cursor`].
#[derive(Debug, Clone, Copy)]
pub struct Cursor {
    pub site: i64,
    key: u64,
    pub used: u32,
    pub start: u32,
    base: u32,
    bits: u64,
    jump_only: bool,
}

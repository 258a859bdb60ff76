//! The single-toppling operator and explicit toppling sequences.

use serde::{Deserialize, Serialize};

use crate::config::{Config, Odometer, SiteContent};
use crate::error::{Error, Result};
use crate::instructions::{Instruction, InstructionArray};
use crate::interval::Interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToppleMode {
    /// The site must hold an active particle.
    Legal,
    /// The site may hold a sleeping particle, which is woken first.
    Acceptable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToppleOutcome {
    /// A lone particle fell asleep.
    Slept,
    /// Sleep instruction on a site with several particles.
    SleepIgnored,
    Moved { to: i64 },
    /// The particle jumped out of the kill region.
    Killed { side: Side },
}

/// Topple `site` once: consume its next instruction and apply it.
///
/// Everything is checked before anything changes, so on error both the
/// configuration and the array are untouched.
pub fn topple(
    config: &mut Config,
    array: &mut InstructionArray,
    site: i64,
    mode: ToppleMode,
    kill_region: Interval,
) -> Result<(Instruction, ToppleOutcome)> {
    let content = config.get(site);
    let count = match (content, mode) {
        (SiteContent::Empty, _) => return Err(Error::ToppleOnEmpty { site }),
        (SiteContent::Sleeping, ToppleMode::Legal) => {
            return Err(Error::ToppleSleepingWhenLegal { site })
        }
        (SiteContent::Sleeping, ToppleMode::Acceptable) => 1,
        (SiteContent::Active(k), _) => k,
    };
    // `site` itself is in the window because it is occupied.
    let instr = array.upcoming(site)?;
    let dest = site + instr.step();
    let killed = !kill_region.contains(dest);
    if instr != Instruction::Sleep && !killed {
        config.index(dest)?;
    }
    array.advance(site);

    let outcome = match instr {
        Instruction::Sleep => {
            if count == 1 {
                config.set(site, SiteContent::Sleeping)?;
                ToppleOutcome::Slept
            } else {
                ToppleOutcome::SleepIgnored
            }
        }
        _ => {
            config.set(site, SiteContent::active(count - 1))?;
            if killed {
                config.killed += 1;
                ToppleOutcome::Killed {
                    side: if dest < site { Side::Left } else { Side::Right },
                }
            } else {
                let arrived = config.get(dest).with_arrival();
                config.set(dest, arrived)?;
                ToppleOutcome::Moved { to: dest }
            }
        }
    };
    Ok((instr, outcome))
}

/// Apply `sequence` toppling by toppling. Returns the final configuration
/// and the occurrence counts of the sequence.
pub fn apply_sequence(
    config: &Config,
    array: &mut InstructionArray,
    sequence: &[i64],
    mode: ToppleMode,
    kill_region: Interval,
) -> Result<(Config, Odometer)> {
    let mut config = config.clone();
    let mut odometer = Odometer::new();
    for (index, &x) in sequence.iter().enumerate() {
        topple(&mut config, array, x, mode, kill_region).map_err(|e| Error::SequenceFailed {
            index,
            source: Box::new(e),
        })?;
        odometer.increment(x);
    }
    Ok((config, odometer))
}

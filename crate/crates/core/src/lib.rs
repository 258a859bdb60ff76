//! Activated random walks on Z in the site-wise representation.
//!
//! Particles carry no randomness of their own. Each site holds a stack of
//! instructions ([`InstructionArray`]) and toppling a site applies the next
//! one ([`topple`]). The other crates of the workspace (stabilization,
//! block coupling, Monte Carlo checks) are built out of that operator.

pub mod config;
pub mod error;
pub mod instructions;
pub mod interval;
pub mod model;
pub mod seed;
pub mod topple;

pub use config::{is_stable_in, Config, Odometer, SiteContent};
pub use error::{Error, Result};
pub use instructions::{Instruction, InstructionArray, JumpLaw, SiteMode};
pub use interval::Interval;
pub use model::ModelParams;
pub use topple::{apply_sequence, topple, Side, ToppleMode, ToppleOutcome};

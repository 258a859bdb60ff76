//! Deterministic seed derivation.
//!
//! Every random quantity in the crate is a pure function of a 64-bit master
//! seed and integer coordinates, so results never depend on evaluation order
//! or on how trials are spread over threads:
//!
//! * instruction `(site, index)` of an array with seed `s` is classified from
//!   the word `mix(mix(mix(s) ^ site) + index)`;
//! * trial `t` of a plan with master seed `m` uses `derive(m, STREAM_TRIAL, t)`;
//! * sub-streams of one trial (instruction array, initial configuration,
//!   strategy randomness) are `derive(trial_seed, STREAM_*, 0)`.
//!
//! `mix` is the SplitMix64 finalizer.

pub const STREAM_TRIAL: u64 = 0x7472_6961_6c00_0001;
pub const STREAM_ARRAY: u64 = 0x6172_7261_7900_0002;
pub const STREAM_INITIAL: u64 = 0x696e_6974_0000_0003;
pub const STREAM_STRATEGY: u64 = 0x7374_7261_7400_0004;
pub const STREAM_COARSE: u64 = 0x636f_6172_7365_0005;
pub const STREAM_OFFSET: u64 = 0x6f66_6673_6574_0006;
pub const STREAM_PILOT: u64 = 0x7069_6c6f_7400_0007;

#[inline(always)]
pub fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of item `index` in stream `stream` below `parent`.
pub fn derive(parent: u64, stream: u64, index: u64) -> u64 {
    mix(mix(parent ^ mix(stream)).wrapping_add(index))
}

pub fn trial_seed(master: u64, trial: u64) -> u64 {
    derive(master, STREAM_TRIAL, trial)
}

/// Uniform in `[0, 1)` from the top 53 bits of a word.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

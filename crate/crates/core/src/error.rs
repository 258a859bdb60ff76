use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("cannot topple site {site}: it is empty")]
    ToppleOnEmpty { site: i64 },

    #[error("legal toppling requested at site {site}, which holds a sleeping particle")]
    ToppleSleepingWhenLegal { site: i64 },

    #[error("toppling sequence failed at position {index}: {source}")]
    SequenceFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("site {site} is outside the configuration window [{lo}, {hi}]")]
    WindowOverflow { site: i64, lo: i64, hi: i64 },

    #[error("instruction stack at site {site} exceeded the depth cap of {cap}")]
    DepthCap { site: i64, cap: u32 },

    #[error("cannot override instruction ({site}, {index}): it has already been read or consumed")]
    OverrideAfterRead { site: i64, index: u32 },

    #[error("cannot change the stack mode of site {site}: its stack has already been read")]
    ModeAfterRead { site: i64 },

    #[error("toppling budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },

    #[error("forced march exceeded its budget of {budget} topplings")]
    MarchBudgetExhausted { budget: u64 },

    #[error("marching particle left the simulated block window at site {site}")]
    BlockWindowOverflow { site: i64 },

    #[error("invariant ({item}) violated: {detail}")]
    InvariantViolated { item: &'static str, detail: String },

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("empty sample")]
    EmptySample,

    #[error("every trial was truncated by the toppling budget ({trials} trials)")]
    AllTrialsTruncated { trials: u64 },

    #[error("epsilon {eps} is outside the admissible range [0, {max})")]
    EpsilonOutOfRange { eps: f64, max: f64 },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

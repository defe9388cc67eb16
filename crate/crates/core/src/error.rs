use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("no slow subspace: every reaction direction is conserved or the network is empty")]
    NoSlowSubspace,

    #[error("slow dynamics are jump-driven; reactions {0:?} have discrete jumps at the slowest scale")]
    SlowJumps(Vec<String>),

    #[error("found {0} time-scale levels; at most three are supported")]
    TooManyLevels(usize),

    #[error("time-scale exponents are not strictly separated: {0}")]
    ScalesNotSeparated(String),

    #[error("slowest level exponent is {m0}; rescale time with gamma = {suggested}")]
    SlowExponentNonzero { m0: String, suggested: String },

    #[error("no alpha-homogeneous basis exists; witness direction {witness:?}")]
    NoHomogeneousBasis { witness: Vec<String> },

    #[error("fast chain is reducible; closed communicating classes {classes:?}")]
    ReducibleChain { classes: Vec<Vec<usize>> },

    #[error("fast state space exceeds {0} states")]
    UnboundedStateSpace(usize),

    #[error("moment closure unavailable: {0}")]
    MomentClosure(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("right-hand side not centered (mean {0:e})")]
    Uncentered(f64),

    #[error("central-limit scaling unavailable: {0}")]
    CltScaling(String),

    #[error("quadratic variation diverges for reaction {0}")]
    DivergentVariation(String),

    #[error("diffusion matrix is indefinite (eigenvalue {0:e})")]
    IndefiniteDiffusion(f64),

    #[error("event cap of {0} exceeded")]
    EventCap(u64),

    #[error("propensity overflow in reaction {0}")]
    PropensityOverflow(String),

    #[error("non-finite state at t = {0}")]
    NonFinite(f64),

    #[error("solution blew up at t = {0}")]
    BlowUp(f64),

    #[error("{failed} of {runs} trajectories failed: {first}")]
    EnsembleFailure { failed: usize, runs: usize, first: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for errors where the network is well formed but the multiscale analysis refuses it.
    pub fn is_pipeline_rejection(&self) -> bool {
        !matches!(
            self,
            Error::Parse { .. } | Error::InvalidArgument(_) | Error::GridMismatch(_)
        )
    }
}

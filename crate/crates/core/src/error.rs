use alloc::string::String;

/// Errors raised by the protocol primitives.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A real value that should sit on the lattice does not.
    #[error("value {value} is not a lattice multiple of step {step}")]
    OffLattice { value: f64, step: f64 },

    /// The rejection sampler exceeded its iteration cap.
    #[error("discrete Gaussian sampler stalled after {iterations} rejections (sigma = {sigma})")]
    SamplerStall { sigma: f64, iterations: u64 },

    /// A recovered aggregate coordinate lies outside the plaintext bound, so the
    /// modular sum has most likely wrapped.
    #[error("aggregate coordinate {coordinate} = {value} exceeds plaintext bound {bound}")]
    OverflowSuspected {
        coordinate: usize,
        value: i64,
        bound: i64,
    },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    /// The global model acquired a non-finite entry.
    #[error("model became non-finite in round {round}")]
    Diverged { round: u64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

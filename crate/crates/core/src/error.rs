use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },

    #[error("input vector {index} is not a unit vector (norm {norm})")]
    NonUnitVector { index: usize, norm: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("matrix is singular or too ill-conditioned (condition number {condition})")]
    SingularMatrix { condition: f64 },

    #[error("duplicate constraint id `{0}`")]
    DuplicateId(String),

    #[error("constraint `{constraint}` depends on coordinate {coord} (probe difference {difference})")]
    NotInvariant {
        constraint: String,
        coord: usize,
        difference: f64,
    },

    #[error("constraint `{constraint}` has degenerate gradient {norm} below half its floor {floor}")]
    DegenerateGradient {
        constraint: String,
        norm: f64,
        floor: f64,
    },

    #[error("reflection did not converge after {sweeps} sweeps; worst constraint `{constraint}` at {violation}")]
    StepFailure {
        constraint: String,
        violation: f64,
        sweeps: usize,
    },

    #[error("no feasible point found after {tries} attempts")]
    NoFeasiblePoint { tries: usize },

    #[error("point is not feasible: constraint `{constraint}` has value {value}")]
    Infeasible { constraint: String, value: f64 },

    #[error("no active constraint at the given point")]
    NoActiveConstraint,

    #[error("rejection sampler acceptance rate {rate} is below the floor {floor}; use a smaller instance")]
    AcceptanceTooLow { rate: f64, floor: f64 },

    #[error("integrability of the Gibbs measure is not established at temperature {temperature}")]
    IntegrabilityUnknown { temperature: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("path record does not match the model: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T, E = AsepError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsepError {
    #[error("invalid permutation {0:?}: entries must be a bijection of 1..=N")]
    InvalidPermutation(Vec<usize>),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("p = 0 is not supported: the contour-integral formula holds only for p != 0")]
    ZeroRightRate,

    #[error("rate p = {0} outside [0, 1]")]
    InvalidRate(f64),

    #[error("spectral point is zero")]
    ZeroSpectralPoint,

    #[error("spectral points sit on a Bethe pole: p + q*xi*xi' - xi' vanishes")]
    BethePole,

    #[error("transposition word does not evaluate to the permutation")]
    WordMismatch,

    #[error("invalid species map {labels:?} for {species} species")]
    InvalidSpecies { labels: Vec<u32>, species: u32 },

    #[error("species map is not in the orbit of the initial species map")]
    OrbitMismatch,

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("inadmissible contour: {0}")]
    InadmissibleContour(String),

    #[error("non-finite integrand value at a quadrature node")]
    NonFinite,

    #[error("quadrature did not converge: {nodes} nodes per variable, error estimate {estimate:.3e}")]
    NonConvergence { nodes: usize, estimate: f64 },

    #[error("enumeration too large: {0}")]
    Infeasible(String),

    #[error("window too small: {0}")]
    WindowTooSmall(String),

    #[error("reference distribution has no entry for configuration {0}")]
    MissingReference(String),
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MfeError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("singular evaluation: {0}")]
    Singularity(String),
    #[error("under-resolved grid: {0}")]
    Resolution(String),
    #[error("Newton iteration did not converge after {} steps (last residual {:.3e})", history.len(), history.last().copied().unwrap_or(f64::NAN))]
    Divergence { history: Vec<f64> },
    #[error("linear solver failure: {0}")]
    LinearSolver(String),
    #[error("eigensolver failure: {0}")]
    Eigen(String),
    #[error("no interior maximum near blow-up point {0}")]
    NotBlownUp(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MfeError>;

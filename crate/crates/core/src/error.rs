use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("matrix is singular at pivot {index}")]
    SingularMatrix { index: usize },

    #[error("matrix is not positive definite (failed at row {index})")]
    NotPositiveDefinite { index: usize },

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("evaluation domain error at ({x}, {y}): {msg}")]
    EvalDomain { x: f64, y: f64, msg: String },

    #[error("structural hypothesis violated: {0}")]
    Structural(String),

    #[error("state {s} left the admissible region s > {bound}")]
    Guard { s: f64, bound: f64 },

    #[error("no positive principal eigenvalue")]
    NoPositivePrincipal,

    #[error("eigensolver did not converge: {0}")]
    EigenNoConvergence(String),

    #[error("newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian at lambda = {lam}")]
    SingularJacobian { lam: f64 },

    #[error("sub/super ordering violated at node {node}")]
    Ordering { node: usize },

    #[error("{which} check failed at node {node} (residual {residual:e})")]
    BracketResidual { which: &'static str, node: usize, residual: f64 },

    #[error("monotone iteration failed: {0}")]
    NonMonotone(String),

    #[error("corrector failure: {0}")]
    Corrector(String),

    #[error("insufficient small-amplitude points ({found}); try ds0 = {suggested_ds0:e}")]
    InsufficientPoints { found: usize, suggested_ds0: f64 },

    #[error("analysis: {0}")]
    Analysis(String),

    #[error("config error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config { line: None, msg: msg.into() }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

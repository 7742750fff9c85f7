use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdent { name: String, offset: usize },

    #[error("expected {expected} components, found {found}")]
    Arity { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("root finding failed: {0}")]
    RootFind(String),

    /// `I + ∇x g(x, z)` lost invertibility, so the jump flow is not a
    /// diffeomorphism at this point.
    #[error("jump map I + ∇x g is singular at {0}; the flow is not invertible here")]
    SingularJumpMap(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("unsupported form: {0}")]
    Unsupported(String),

    #[error("unknown model `{0}` (built-ins: example1..example5, kinetic)")]
    UnknownModel(String),

    #[error("invalid model file, field `{field}`: {msg}")]
    Schema { field: String, msg: String },

    #[error("path blew up at t = {t:.6}: |X| = {norm:.3e}")]
    BlowUp { t: f64, norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

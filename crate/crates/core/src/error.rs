use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value was not recorded on this tape")]
    ForeignValue,

    #[error("loss must be a scalar (1 element), got {0} elements")]
    NotScalar(usize),

    #[error("engine `{0}` is not differentiable through the tape")]
    NotDifferentiable(String),

    #[error("fixed-point iteration diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("dense Jacobian of size {n} exceeds the cap of {cap} entries per side")]
    CapExceeded { n: usize, cap: usize },

    #[error("Jacobian is identically zero; NEM undefined")]
    ZeroJacobian,

    #[error("denoiser output is identically zero; ratio undefined")]
    ZeroOutput,

    #[error("image {height}x{width} is smaller than the {window}x{window} window")]
    WindowTooLarge { height: usize, width: usize, window: usize },

    #[error("weights format error: {0}")]
    Format(String),

    #[error("weights version mismatch: file has {found}, expected {expected}")]
    Version { found: u16, expected: u16 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("duplicate layer name `{0}`")]
    DuplicateName(String),

    #[error("missing layer `{0}`")]
    MissingLayer(String),

    #[error("topology descriptor: {0}")]
    Topology(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }

    /// True for failures that signal numerical divergence rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}

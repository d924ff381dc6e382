use thiserror::Error;

pub type Result<T, E = QcmError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcmError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular design (condition number {condition:.3e}) for levels {levels:?}")]
    SingularDesign { condition: f64, levels: Vec<f64> },

    #[error("degenerate scale: |beta1| = {beta1:.3e} is not above {threshold:.3e}")]
    DegenerateScale { beta1: f64, threshold: f64 },

    #[error("insufficient pool: {n0} quantile paths survived, at least {required} needed")]
    InsufficientPool { n0: usize, required: usize },

    #[error("estimation failure: {0}")]
    Estimation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl QcmError {
    /// True for failures of the numerical estimation itself, as opposed to
    /// bad inputs or configuration.
    pub fn is_estimation_failure(&self) -> bool {
        matches!(
            self,
            QcmError::Estimation(_)
                | QcmError::InsufficientPool { .. }
                | QcmError::SingularDesign { .. }
                | QcmError::DegenerateScale { .. }
                | QcmError::Degenerate(_)
        )
    }
}

pub(crate) fn check_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(QcmError::LengthMismatch { what, left, right });
    }
    Ok(())
}

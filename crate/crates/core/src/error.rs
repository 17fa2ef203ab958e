use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value or parameter shape is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violates a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A gradient or parameter became NaN or infinite.
    #[error("non-finite value in parameter group `{group}`")]
    NonFinite { group: String },

    #[error("scene too crowded: could not place object {object} after {attempts} attempts")]
    SceneTooCrowded { object: usize, attempts: usize },

    /// Trace and parameters do not belong to the same forward call.
    #[error("internal error: {0}")]
    Internal(String),
}

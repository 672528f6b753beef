use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

/// Failures surfaced by the CLI, split by exit code.
#[derive(Debug, Error)]
pub enum LabError {
    /// Bad flags, unreadable or invalid configuration, unwritable output.
    #[error("{0}")]
    Invalid(String),

    /// A computation diverged, lost definiteness, or failed its check.
    #[error("{0}")]
    Numerical(String),
}

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        LabError::Numerical(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Invalid(_) => 1,
            LabError::Numerical(_) => 2,
        }
    }
}

impl From<hclm_core::Error> for LabError {
    fn from(e: hclm_core::Error) -> Self {
        use hclm_core::Error as E;
        match e {
            E::Divergence { .. } | E::NotPositiveDefinite { .. } | E::UndefinedInformation(_) => {
                LabError::Numerical(e.to_string())
            }
            _ => LabError::Invalid(e.to_string()),
        }
    }
}

impl From<hclm_langevin::Error> for LabError {
    fn from(e: hclm_langevin::Error) -> Self {
        match e {
            hclm_langevin::Error::BlowUp { .. } => LabError::Numerical(e.to_string()),
            _ => LabError::Invalid(e.to_string()),
        }
    }
}

impl From<hclm_scaling_memory::Error> for LabError {
    fn from(e: hclm_scaling_memory::Error) -> Self {
        LabError::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Invalid(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Invalid(format!("json error: {e}"))
    }
}

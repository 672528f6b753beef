use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dt = {dt:e} exceeds the explicit stability limit {limit:e}")]
    Unstable { dt: f64, limit: f64 },

    #[error("non-finite particle position at t = {time}; try a smaller dt than {dt:e}")]
    BlowUp { time: f64, dt: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

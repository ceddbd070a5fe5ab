use crate::model_io::ModelError;
use crate::ring::RingError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("handshake rejected: {0}")]
    Handshake(String),
    /// An active-security check failed. Outputs are withheld.
    #[error("protocol abort (cheating detected): {0}")]
    Abort(String),
    #[error("preprocessing exhausted: {0}")]
    Exhausted(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_abort(&self) -> bool {
        matches!(self, Error::Abort(_))
    }
}

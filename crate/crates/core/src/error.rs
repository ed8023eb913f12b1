use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<adsf_autodiff::Error> for Error {
    fn from(e: adsf_autodiff::Error) -> Self {
        use adsf_autodiff::Error as A;
        match e {
            A::InvalidInput(m) => Error::InvalidInput(m),
            A::Numerical(m) => Error::Numerical(m),
            A::Format(m) => Error::Checkpoint(m),
            A::Io(e) => Error::Io(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::eval::EvalError;
use crate::interchange::{FormatError, ManifestError};
use crate::matching::MatchError;
use crate::reference::ReferenceError;
use crate::synth::SynthError;
use crate::tensor::ModelError;

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or missing input: files, manifests, configuration.
    Input,
    /// A numeric step failed on inputs that passed validation.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("category {category}: {source}")]
    Reference {
        category: String,
        #[source]
        source: ReferenceError,
    },
    #[error("image {image}, proposal {proposal}: {source}")]
    Match {
        image: String,
        proposal: usize,
        #[source]
        source: MatchError,
    },
    #[error(transparent)]
    Config(#[from] MatchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Input(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Format(_)
            | Error::Manifest(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Input(_) => ErrorKind::Input,
            Error::Eval(e) => match e {
                EvalError::Model(_) => ErrorKind::Numeric,
                _ => ErrorKind::Input,
            },
            Error::Synth(e) => match e {
                SynthError::Io { .. } | SynthError::InvalidSpec(_) | SynthError::Infeasible(_) => ErrorKind::Input,
                _ => ErrorKind::Numeric,
            },
            Error::Model(_) | Error::Reference { .. } | Error::Match { .. } => ErrorKind::Numeric,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Labeling sessions over HTTP: a coder labels clips, the service retrains
//! and reorders the remaining queue.

pub mod http;
pub mod session;
pub mod store;

use thiserror::Error;

pub use http::{parse_range, router, run_server};
pub use session::{model_ref, CreateSession, LabelAck, QueueEntry, RetrainGuard, RetrainSummary, Session, SessionManager, SessionView};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown clip {0:?}")]
    UnknownClip(String),
    #[error("session {0:?} already exists")]
    SessionExists(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("feature pipeline failed: {0}")]
    FeaturePipelineFailure(String),
    #[error("training needs at least one positive and one negative label")]
    MissingClass,
    #[error("a retrain is already running for this session")]
    RetrainInProgress,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("requested range not satisfiable")]
    RangeNotSatisfiable,
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::UnknownSession(_) => "UnknownSession",
            ServeError::UnknownClip(_) => "UnknownClip",
            ServeError::SessionExists(_) => "SessionExists",
            ServeError::InvalidManifest(_) => "InvalidManifest",
            ServeError::FeaturePipelineFailure(_) => "FeaturePipelineFailure",
            ServeError::MissingClass => "MissingClass",
            ServeError::RetrainInProgress => "RetrainInProgress",
            ServeError::BadRequest(_) => "BadRequest",
            ServeError::RangeNotSatisfiable => "RangeNotSatisfiable",
            ServeError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServeError::UnknownSession(_) | ServeError::UnknownClip(_) => 404,
            ServeError::SessionExists(_) | ServeError::MissingClass | ServeError::RetrainInProgress => 409,
            ServeError::InvalidManifest(_) | ServeError::BadRequest(_) => 400,
            ServeError::FeaturePipelineFailure(_) => 422,
            ServeError::RangeNotSatisfiable => 416,
            ServeError::Internal(_) => 500,
        }
    }
}

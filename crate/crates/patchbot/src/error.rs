use std::fmt;

use patchbot_core::classifier::ModelError;
use patchbot_core::feedback::FeedbackError;
use patchbot_core::filter::InvalidPrefix;
use patchbot_core::ingest::IngestError;
use patchbot_core::patch::ParseError;
use patchbot_core::preprocess::PreprocessError;
use serde::Serialize;

/// A domain failure with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AppError {
    pub code: &'static str,
    pub detail: String,
    #[serde(skip)]
    pub status: u16,
}

impl AppError {
    pub fn new(code: &'static str, status: u16, detail: impl Into<String>) -> Self {
        AppError {
            code,
            detail: detail.into(),
            status,
        }
    }

    pub fn bad_request(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(code, 400, detail)
    }

    pub fn not_found(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(code, 404, detail)
    }

    pub fn conflict(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(code, 409, detail)
    }

    pub fn internal(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(code, 500, detail)
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail.replace('\n', " "))
    }
}

impl std::error::Error for AppError {}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::internal("io", e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::internal("json", e.to_string())
    }
}

impl From<IngestError> for AppError {
    fn from(e: IngestError) -> Self {
        let detail = e.to_string();
        match e {
            IngestError::RepoUnavailable { .. } => AppError::internal("repo_unavailable", detail),
            IngestError::InvalidWindow(_) => AppError::bad_request("invalid_window", detail),
            IngestError::ConflictingFeedback { .. } => {
                AppError::conflict("conflicting_feedback", detail)
            }
            IngestError::LabelFile { .. } => AppError::bad_request("label_file", detail),
            IngestError::Io(_) => AppError::internal("io", detail),
            IngestError::Json(_) => AppError::internal("json", detail),
        }
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        let detail = e.to_string();
        match e {
            ModelError::ShapeMismatch(_) => AppError::internal("shape_mismatch", detail),
            ModelError::DegenerateCorpus(_) => AppError::bad_request("degenerate_corpus", detail),
            ModelError::InvalidConfig(_) => AppError::bad_request("invalid_config", detail),
            ModelError::ChecksumMismatch { .. } => AppError::internal("checksum_mismatch", detail),
            ModelError::VersionMismatch { .. } => AppError::internal("version_mismatch", detail),
            ModelError::TrainingInProgress(_) => AppError::conflict("retrain_in_progress", detail),
            ModelError::MalformedBundle(_) => AppError::internal("malformed_bundle", detail),
            ModelError::Preprocess(_) => AppError::internal("preprocess", detail),
            ModelError::Io(_) => AppError::internal("io", detail),
            ModelError::Json(_) => AppError::internal("json", detail),
        }
    }
}

impl From<FeedbackError> for AppError {
    fn from(e: FeedbackError) -> Self {
        let detail = e.to_string();
        match e {
            FeedbackError::UnknownSha(_) => AppError::not_found("unknown_sha", detail),
            FeedbackError::InvalidRecord(_) => AppError::bad_request("invalid_record", detail),
            FeedbackError::CorruptLog { .. } => AppError::internal("corrupt_log", detail),
            FeedbackError::Io(_) => AppError::internal("io", detail),
            FeedbackError::Json(_) => AppError::internal("json", detail),
        }
    }
}

impl From<PreprocessError> for AppError {
    fn from(e: PreprocessError) -> Self {
        AppError::internal("preprocess", e.to_string())
    }
}

impl From<ParseError> for AppError {
    fn from(e: ParseError) -> Self {
        AppError::bad_request("parse_error", e.to_string())
    }
}

impl From<InvalidPrefix> for AppError {
    fn from(e: InvalidPrefix) -> Self {
        AppError::bad_request("invalid_module_list", e.to_string())
    }
}

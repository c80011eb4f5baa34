use std::path::PathBuf;

use crate::types::{Evaluation, SliceFraction};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error("invalid slice fraction {0:?}: expected a decimal in (0, 1]")]
    InvalidSlice(String),

    #[error("run {run_id}: slice {slice} lacks metric {metric:?} present in full metrics")]
    MissingSliceMetric {
        run_id: String,
        slice: SliceFraction,
        metric: String,
    },

    #[error("run {run_id}: slice 1.0 metrics differ from full metrics")]
    SliceFullMismatch { run_id: String },

    #[error("run {run_id}: non-positive timing for {key}")]
    NonPositiveTiming { run_id: String, key: Evaluation },

    #[error("duplicate run id {0:?}")]
    DuplicateRunId(String),

    #[error("mandatory steps cost {required_h}h which exceeds the {delta_tau_h}h window")]
    Infeasible { required_h: f64, delta_tau_h: f64 },

    #[error("priority order is invalid: {0}")]
    InvalidPriority(String),

    #[error("no telemetry with positive duration")]
    NoTelemetry,

    #[error("metric {0:?} missing")]
    MetricMissing(String),

    #[error("run {run_id}: slice {slice} missing")]
    SliceMissing { run_id: String, slice: SliceFraction },

    #[error("run {0}: full metrics required but absent")]
    FullMetricsMissing(String),

    #[error("relative gate requires baseline metrics")]
    BaselineMissing,

    #[error("empty pool")]
    EmptyPool,

    #[error("empty agreement history")]
    EmptyHistory,

    #[error("invalid protocol parameters: {0}")]
    InvalidParams(String),

    #[error("invalid quality model: {0}")]
    InvalidModel(String),

    #[error("degenerate gain range: {0}")]
    DegenerateRange(String),

    #[error("power trace is empty")]
    EmptyTrace,

    #[error("run {run_id}: missing timing for {key}")]
    MissingTiming { run_id: String, key: Evaluation },

    #[error("run {run_id}: missing power trace for {key}")]
    MissingTrace { run_id: String, key: Evaluation },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line} (run {run_id}): {source}")]
    Validation {
        line: usize,
        run_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the ingestion, solver, analytics and synthesis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("period length must be at least 2 samples, got {0}")]
    InvalidPeriod(usize),
    #[error("series has no samples")]
    EmptySeries,
    #[error("sample index {0} is invalid (indices start at 1 and must be unique)")]
    InvalidSampleIndex(usize),
    #[error("value {value} at sample {index} lies outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("malformed event log for subject {subject}: {reason}")]
    MalformedLog { subject: String, reason: String },
    #[error("ill-posed subproblem: negative curvature along working direction (pivot {pivot:e})")]
    IllPosedSubproblem { pivot: f64 },
    #[error("subproblem solver did not reach the KKT tolerance after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("basis function {component} collapsed to zero and could not be reseeded")]
    DegenerateComponent { component: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("requested rank {requested} exceeds data dimensions (max {available})")]
    RankExceedsData { requested: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("observed days do not overlap")]
    NoOverlap,
    #[error("k = {k} exceeds the number of subjects ({subjects})")]
    TooManyClusters { k: usize, subjects: usize },
    #[error("no observed ground truth in the evaluation window")]
    NoGroundTruth,
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short kebab-case name, stable across releases; the CLI prints it on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidPeriod(_) => "invalid-period",
            Error::EmptySeries => "empty-series",
            Error::InvalidSampleIndex(_) => "invalid-sample-index",
            Error::ValueOutOfRange { .. } => "value-out-of-range",
            Error::MalformedLog { .. } => "malformed-log",
            Error::IllPosedSubproblem { .. } => "ill-posed-subproblem",
            Error::NotConverged { .. } => "not-converged",
            Error::DegenerateComponent { .. } => "degenerate-component",
            Error::EmptyDataset => "empty-dataset",
            Error::RankExceedsData { .. } => "rank-exceeds-data",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NoOverlap => "no-overlap",
            Error::TooManyClusters { .. } => "too-many-clusters",
            Error::NoGroundTruth => "no-ground-truth",
            Error::InfeasibleSpec(_) => "infeasible-spec",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Parse { .. } => "parse-error",
            Error::Io { .. } => "io-error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

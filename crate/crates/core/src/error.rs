use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: malformed date `{value}` (expected YYYY-MM-DD)")]
    MalformedDate { row: usize, value: String },
    #[error("row {row}: invalid value `{value}` in column `{column}`")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: empty activity")]
    EmptyActivity { row: usize },
    #[error("case {case_id}: attribute `{attribute}` varies within the case")]
    InconsistentAttributes { case_id: String, attribute: String },

    #[error("trace has no events")]
    EmptyTrace,
    #[error("activity `{0}` is not in the schema's activity alphabet")]
    UnknownActivity(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate labels: both classes must be present")]
    DegenerateLabels,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("AUC undefined: need at least one positive and one negative instance")]
    AucUndefined,
    #[error("lift undefined: no positive instances")]
    NoPositives,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("need at least 2 traces to split, got {0}")]
    TooFewTraces(usize),
    #[error("fold {fold} of {k} contains a single class; reduce k")]
    FoldMissingClass { fold: usize, k: usize },
    #[error("empty hyper-parameter grid")]
    EmptyGrid,

    #[error("case {case_id}: no events at or before {as_of}")]
    NoEventsBefore { case_id: String, as_of: String },
    #[error("empty event log")]
    EmptyLog,

    #[error("calibration target {target} unreachable with intercept in [-20, 20]")]
    CalibrationUnreachable { target: f64 },
    #[error("marker activity `{0}` does not occur in the log")]
    MarkerAbsent(String),
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("need at least two non-empty stage groups")]
    TooFewGroups,

    #[error("input `{0}` differs from the one recorded in the manifest")]
    InputChanged(PathBuf),
    #[error("replay produced different outputs: {}", .0.join(", "))]
    ReplayMismatch(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("MissingColumn: column `{0}` not found in header")]
    MissingColumn(String),

    #[error("ParseError: row {row}, column `{column}`: {reason}")]
    ParseError {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("EmptyLog: the event log contains no events")]
    EmptyLog,

    #[error("DegenerateSplit: {train} train cases / {test} test cases")]
    DegenerateSplit { train: usize, test: usize },

    #[error(
        "MissingAttribute: case `{case_id}` has no `{attribute}` and no default is configured"
    )]
    MissingAttribute { case_id: String, attribute: String },

    #[error("UnknownState: state `{0}` has no observed decisions")]
    UnknownState(String),

    #[error("LengthMismatch: expected {expected} decisions, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("AbstractionMismatch: counts built at {built}, requested {requested}")]
    AbstractionMismatch { built: String, requested: String },

    #[error("NonterminatingProcess: case {case} exceeded the length cap of {cap} events")]
    NonterminatingProcess { case: usize, cap: usize },

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed table: {0}")]
    Table(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("design has {rows} rows but {cols} columns; need more rows than columns")]
    TooFewRows { rows: usize, cols: usize },

    #[error("design is rank deficient: column {column} ({name}) is linearly dependent on earlier columns")]
    RankDeficient { column: usize, name: String },

    #[error("perfect separation in logistic fit: {0}")]
    Separation(String),

    #[error("score `{0}` is unidentified: every coefficient multiplying it is zero")]
    Unidentified(String),

    #[error("cannot L1-normalise an all-zero weight vector")]
    ZeroWeights,

    #[error("criterion {0} is undefined for this model")]
    CriterionUndefined(&'static str),

    #[error("no candidate moves to evaluate")]
    NoCandidates,

    #[error("standardisation failed: residuals have zero variance")]
    ZeroVariance,

    #[error("cross-validation: {0}")]
    CrossValidation(String),
}

impl Error {
    /// True for failures of the numerical machinery as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::TooFewRows { .. }
                | Error::RankDeficient { .. }
                | Error::Separation(_)
                | Error::Unidentified(_)
                | Error::ZeroWeights
                | Error::ZeroVariance
                | Error::CrossValidation(_)
        )
    }

    pub(crate) fn rename_column(self, names: &[String]) -> Self {
        match self {
            Error::RankDeficient { column, .. } => Error::RankDeficient {
                column,
                name: names.get(column).cloned().unwrap_or_else(|| format!("#{column}")),
            },
            other => other,
        }
    }
}

//! Error type shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-supplied configuration or arguments failed.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A required column is missing from a CSV header.
    #[error("column '{column}' not found in CSV header")]
    MissingColumn { column: String },

    /// A cell could not be parsed as a number.
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    BadNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    /// A categorical cell holds a value absent from the configured mapping.
    #[error("row {row}, column '{column}': value '{value}' is not in the configured mapping")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },

    /// A partition step demanded more records of one attribute than exist.
    #[error("attribute '{attribute}': need {required} records, only {available} available")]
    InfeasibleAttribute {
        attribute: String,
        required: usize,
        available: usize,
    },

    /// A partition step demanded more records of one class than exist.
    #[error("class '{class}': need {required} records, only {available} available")]
    InfeasibleClass {
        class: String,
        required: usize,
        available: usize,
    },

    /// Parameter vectors disagree on shape where they must match.
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    /// A numeric quantity that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An operation received an empty collection it cannot work with.
    #[error("{0} is empty")]
    EmptyInput(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

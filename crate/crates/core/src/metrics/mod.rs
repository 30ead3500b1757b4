//! Agreement statistics: ICC(2,1) with confidence intervals, clinical bands,
//! and per-kind report aggregation.

mod icc;
mod report;
pub mod special;

pub use icc::{band, icc_2_1, AnovaComponents, Band, IccResult, PairedSamples};
pub use report::{
    aggregate, comparison_table, improvement_pct, Aggregate, EvaluationReport, ReportRow, Summary,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ICC needs n >= 3 rows and k >= 2 columns, got n={n}, k={k}")]
    TooFewSamples { n: usize, k: usize },
    #[error("{0}")]
    Shape(String),
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("confidence level must lie in (0,1), got {0}")]
    Confidence(f64),
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("cannot aggregate an empty report")]
    Empty,
    #[error("reports cover different measurements: {0}")]
    Incompatible(String),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

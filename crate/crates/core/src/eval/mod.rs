//! Classification metrics, ROC/PR curves and the k-fold harness.
//!
//! Zero denominators in precision/recall yield 0 with a `degenerate` flag.
//! Multi-class reports carry both macro and micro averages.

mod curves;
mod kfold;
mod metrics;

use thiserror::Error;

pub use curves::{
    curves_svg, one_vs_rest_curves, pr_curve, roc_curve, write_curve_csv, CurveKind, CurvePoint,
    CurveSeries, OneVsRest,
};
pub use kfold::{assign_folds, kfold_run, KFoldSummary};
pub use metrics::{
    argmax_rows, confusion, f1_score, prf1, Averaged, ClassMetrics, ConfusionCounts,
    MetricsReport, Prf1,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("curve needs positive and negative samples{}", class.map(|c| format!(" (class {c})")).unwrap_or_default())]
    SingleClassOnly { class: Option<usize> },
    #[error("precision-recall curve needs at least one positive")]
    NoPositives,
    #[error("score {index} is not finite")]
    InvalidScore { index: usize },
    #[error("probability row {row} sums to {sum}, not 1")]
    RowsNotNormalized { row: usize, sum: f64 },
    #[error("k-fold needs at least 2 folds, got {0}")]
    InvalidFoldCount(usize),
    #[error("missing fold ids: {0}")]
    MissingFoldIds(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

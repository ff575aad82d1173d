//! ROC construction, operating points and the report harness.

mod report;
mod roc;
mod run;

pub use report::{ablation_report, AblationRow, AblationTable, AblationVariant};
pub use roc::{
    candidate_thresholds, frr_at, roc, roc_svg, utterance_frr, write_roc_tsv, EvalRun, FaCounting, OperatingPoint,
    RocCurve, RocPoint,
};
pub use run::{embed_windows, score_eval_set, KeywordGroup, QbyeEvalSet};

use thiserror::Error;

use crate::detect::DetectError;
use crate::encoder::EncoderError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scores to evaluate (need at least one positive and one negative window)")]
    EmptyScores,
    #[error("negative audio totals zero hours")]
    ZeroNegativeHours,
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("invalid evaluation input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

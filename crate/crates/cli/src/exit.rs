//! Stable process exit codes.

use std::fmt;

use qbye_core::detect::DetectError;
use qbye_core::eval::EvalError;
use qbye_core::train::TrainError;

pub const OK: u8 = 0;
pub const NO_EVENTS: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const NON_FINITE: u8 = 4;
pub const FINGERPRINT: u8 = 5;

/// An error paired with the exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exit {}: {:#}", self.code, self.error)
    }
}

pub trait OrExit<T> {
    /// Tags the error with `code`, unless its chain carries a more specific
    /// code (non-finite loss or fingerprint mismatch).
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| {
            let error = e.into();
            let code = specific_code(&error).unwrap_or(code);
            Failure { code, error }
        })
    }
}

fn specific_code(err: &anyhow::Error) -> Option<u8> {
    for cause in err.chain() {
        if let Some(TrainError::NonFiniteLoss { .. }) = cause.downcast_ref::<TrainError>() {
            return Some(NON_FINITE);
        }
        if let Some(DetectError::FingerprintMismatch { .. }) = cause.downcast_ref::<DetectError>() {
            return Some(FINGERPRINT);
        }
    }
    None
}

/// Data or config code for a training failure.
pub fn train_code(err: &TrainError) -> u8 {
    match err {
        TrainError::InvalidConfig(_) | TrainError::Loss(_) => CONFIG,
        TrainError::NonFiniteLoss { .. } => NON_FINITE,
        _ => DATA,
    }
}

/// Evaluation inputs that are missing or empty are data errors; anything
/// else wrong with the detector settings is a config error.
pub fn eval_code(err: &EvalError) -> u8 {
    match err {
        EvalError::Detect(DetectError::InvalidConfig(_)) => CONFIG,
        EvalError::Detect(DetectError::FingerprintMismatch { .. }) => FINGERPRINT,
        _ => DATA,
    }
}

/// Returns a usage failure with `msg`.
pub fn usage(msg: impl fmt::Display) -> Failure {
    Failure {
        code: CONFIG,
        error: anyhow::anyhow!("{msg}"),
    }
}

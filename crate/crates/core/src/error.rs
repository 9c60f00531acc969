use thiserror::Error;

/// Errors raised by the models and estimators of this crate.
///
/// Wire-format failures have their own type, [`crate::protocol::FrameError`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} is outside its domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("no solution: {0}")]
    NoSolution(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("missing intensity class in statistics: {0}")]
    MissingClass(&'static str),
    #[error("single-photon yield bound is zero; no key can be distilled")]
    NoSinglePhotonYield,
    #[error("reconciliation failed: keys still differ after all passes")]
    ReconciliationFailed,
    #[error("parity oracle failed: {0}")]
    Oracle(&'static str),
    #[error("calibration needs at least two anchors, got {0}")]
    Underdetermined(usize),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn ensure_domain(ok: bool, what: &'static str, value: f64) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}

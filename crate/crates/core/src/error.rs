use thiserror::Error;

/// Errors raised by the trial engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("infeasible association: cell {cell} = {value:.6} lies outside [0, 1] for pi_T = {pi_t}, pi_R = {pi_r}, phi = {phi}")]
    InfeasibleAssociation { cell: &'static str, value: f64, pi_t: f64, pi_r: f64, phi: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no stage-1 sample size in {lo}..={hi} keeps the false negative probability at or below {max_fn}")]
    NoFeasibleN { lo: usize, hi: usize, max_fn: f64 },

    #[error("degenerate data: indication {indication} has no patients on dose {dose}")]
    DegenerateData { indication: usize, dose: &'static str },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("no indication has a defined true OBD")]
    NoTruthDefined,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

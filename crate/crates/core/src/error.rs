use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid problem: {0}")]
    Validation(String),
    #[error("invalid step size {step} for horizon {horizon}")]
    InvalidStep { step: f64, horizon: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("Riccati solution is not global: stopped at t = {t_min} ({reason})")]
    NotGlobal { t_min: f64, reason: String },
    #[error("signature factorization failed at t = {t}: {reason}")]
    Factorization { t: f64, reason: String },
    #[error("no usable sign regime: {0}")]
    Regime(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

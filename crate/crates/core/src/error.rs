use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("fixed-point iteration did not converge after {iterations} iterations (last increment ratio {last_ratio:.4})")]
    NonConvergence { iterations: usize, last_ratio: f64 },
    #[error("no contraction radius: ell(s) >= 1 for every probed s")]
    NoContraction,
    #[error("{what} cap exceeded: expansion needs {needed}, cap is {cap}")]
    CapExceeded {
        what: &'static str,
        needed: usize,
        cap: usize,
    },
    #[error("unsupported plant class: {0}")]
    Unsupported(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

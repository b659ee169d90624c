use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("non-finite state at particle {index}, step {step}")]
    NonFinite { index: usize, step: usize },

    #[error("capacity exceeded: {required} bytes required, budget is {budget} bytes")]
    Capacity { required: u64, budget: u64 },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("accuracy not reached: requested {requested:e}, achieved {achieved:e}")]
    Accuracy { requested: f64, achieved: f64 },

    #[error("iteration did not converge after {} steps (last distance {:?})", trace.len(), trace.last())]
    Convergence { trace: Vec<f64> },

    #[error("truncation too short: tail mass {tail:e} exceeds tolerance, {required_terms} terms required")]
    Truncation { tail: f64, required_terms: usize },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("divergent quantity: {0}")]
    Divergence(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {v}")))
    }
}

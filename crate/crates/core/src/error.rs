use thiserror::Error;

use crate::taylor::JetError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Jet(#[from] JetError),

    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("outside the validity region: {0}")]
    Domain(String),

    /// The flat-map recursion produced an invalid sub-state at `level`
    /// (1-based index of the recovered sub-state; `r + 1` is the input).
    #[error("flat map left the validity region at level {level}: {reason}")]
    FlatDomain { level: usize, reason: String },

    #[error("controller failed at t = {t} with state {state:?}: {source}")]
    Controller {
        t: f64,
        state: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("structure mismatch: {0}")]
    Structure(String),

    #[error("invalid time grid: {0}")]
    TimeGrid(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}

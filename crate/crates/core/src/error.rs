use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("transition ({j}, {k}) is degenerate: {reason}")]
    DegenerateTransition { j: usize, k: usize, reason: String },

    #[error("truncation {truncation} is insufficient: doubling it changed the result by {gap:e}")]
    TruncationInsufficient { truncation: usize, gap: f64 },

    #[error("no truncation up to {cap} met the tolerance (last measured gap {last_gap:e})")]
    TruncationCapExhausted { cap: usize, last_gap: f64 },

    #[error("no dispersal found for K <= {k_max}; best K = {best_k} with low-mode mass {best_mass}")]
    DispersalNotFound { k_max: f64, best_k: f64, best_mass: f64 },

    #[error("stage `{stage}` needs duration {duration} which exceeds its budget {budget}")]
    BudgetExceeded { stage: String, duration: f64, budget: f64 },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Attributes an error to a named stage of a larger computation.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

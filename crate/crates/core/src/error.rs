use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("licence evidence is absent; nothing to score")]
    MissingEvidence,
    #[error("graph is not a DAG (cycle through component {0})")]
    NotADag(usize),
    #[error("no ethical source nodes in graph")]
    NoSources,
    #[error("degenerate exponential fit: {0}")]
    DegenerateFit(String),
    #[error("need at least {need} data points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("estimator needs both arms nonempty (treated={treated}, control={control})")]
    EmptyArm { treated: usize, control: usize },
    #[error("logistic fit did not converge after {iterations} iterations (grad norm {grad_norm:.3e})")]
    NoConvergence { iterations: u32, grad_norm: f64 },
    #[error("strict mode: {count} edges reference nodes missing from the graph (first: {first})")]
    UnknownEndpoint { count: usize, first: String },
    #[error("no observations")]
    NoObservations,
    #[error("rule tables: {0}")]
    Rules(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    IoAt {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

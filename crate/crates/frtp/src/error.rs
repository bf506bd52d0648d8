use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrtpError {
    #[error("unknown node: {0}")]
    UnknownNode(String),
    #[error("no route from {from} to {to}")]
    NoRoute { from: String, to: String },
    #[error("discontiguous route: segment {prev} does not connect to {next}")]
    DiscontiguousRoute { prev: String, next: String },
    #[error("unparseable timestamp: {0:?}")]
    BadTimestamp(String),
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("output step {output} not divisible by input step {input}")]
    NotDivisible { input: u32, output: u32 },
    #[error("degenerate target: min == max == {0}")]
    DegenerateTarget(f64),
    #[error("span too short: {0}")]
    SpanTooShort(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pooling ratio {r} exceeds sequence length {len}")]
    RTooLarge { r: usize, len: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid graph: {0}")]
    BadGraph(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

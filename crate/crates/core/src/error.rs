use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid workload config: {0}")]
    InvalidWorkload(String),
    #[error("placement node {node} out of range for {n_nodes} nodes")]
    PlacementOutOfRange { node: usize, n_nodes: usize },
    #[error("balance factor of an empty load vector")]
    EmptyLoads,
    #[error("cannot merge sketches with capacities {left} and {right}")]
    CapacityMismatch { left: usize, right: usize },
    #[error("unknown strategy `{0}` (expected grahj, prpd, sfr, pnr or bppr)")]
    UnknownStrategy(String),
    #[error("unknown detector mode `{0}` (expected oracle, online or twopass)")]
    UnknownDetectorMode(String),
    #[error("{mode} detection needs full statistics and cannot run on a streaming-only workload")]
    NeedsStatistics { mode: &'static str },
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("elapsed time must be positive, got {0}")]
    ZeroElapsed(f64),
    #[error("report has no routing trace; rerun with tracing enabled")]
    MissingTrace,
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("csv error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

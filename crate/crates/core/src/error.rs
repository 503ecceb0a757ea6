use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid scenario tree: {0}")]
    InvalidTree(String),

    #[error("invalid bid-ask matrix: {0}")]
    InvalidBidAsk(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("missing value for leaf `{0}`")]
    MissingLeafValue(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exchange cycle creates value: pi[{i}][{j}] * pi[{j}][{i}] = {product}")]
    ValueCreatingCycle { i: usize, j: usize, product: f64 },

    #[error("spread shrinking failed at node `{node}`, pair ({i}, {j}) after {attempts} attempts")]
    ShrinkExhausted {
        node: String,
        i: usize,
        j: usize,
        attempts: usize,
    },

    #[error("linear program: {0}")]
    Lp(String),

    #[error("LP iteration cap of {0} exceeded")]
    IterationCap(usize),

    #[error("negative terminal holding {value} at leaf `{leaf}`, asset {asset}")]
    NegativeHolding { leaf: String, asset: usize, value: f64 },

    #[error("invalid arbitrage certificate: {0}")]
    InvalidCertificate(String),

    #[error("conditional gradient stopped after {iterations} iterations with gap {gap:e}")]
    NotConverged { iterations: usize, gap: f64 },

    #[error("the market admits arbitrage: {0}")]
    Arbitrage(String),

    #[error("terminal position is not attainable: {0}")]
    NotAttainable(String),

    #[error("robust no-arbitrage fails; refusing to construct prices")]
    NoRobustNoArbitrage,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use crate::market::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point {x} lies outside the domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },
    #[error("robust no-arbitrage fails at node {node}")]
    Arbitrage { node: NodeId },
    #[error("empty price domain at node {node}")]
    EmptyDomain { node: NodeId },
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("infeasible strategy at node {node}: {detail}")]
    Infeasible { node: NodeId, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

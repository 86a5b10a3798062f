use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate lattice")]
    DegenerateLattice,
    #[error("grid too coarse: need at least {needed} points per axis, got {got}")]
    GridTooCoarse { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("g not uniformly positive")]
    NotPositive,
    #[error("cell problem singular")]
    CellSingular,
    #[error("solvability violated: right-hand side mean {0:e}")]
    Solvability(f64),
    #[error("probe inapplicable: {0}")]
    ProbeInapplicable(String),
    #[error("shrink t_max: fit condition number {0:e}")]
    IllConditioned(f64),
    #[error("increase cutoff or eps: {0}")]
    SupportOverflow(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("increase cutoff: truncation loss {0:e}")]
    Truncation(f64),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("component {index} of the integer block is {value}, farther than {tol} from an integer")]
    NonIntegralSolution { index: usize, value: f64, tol: f64 },

    #[error("problem is infeasible")]
    Infeasible,

    #[error("problem is unbounded below")]
    Unbounded,

    #[error("active-set iteration limit reached after {0} pivots")]
    IterLimit(usize),

    #[error("oracle exhausted: branch-and-bound node limit {0} reached")]
    OracleExhausted(u64),

    #[error("combinatorial limit exceeded: {0} integer assignments > {1}")]
    CombinatorialLimit(u64, u64),

    #[error("integer variable {0} has no finite bound rows")]
    MissingIntegerBounds(usize),

    #[error("degenerate strategy: KKT system unusable after regularization")]
    DegenerateStrategy,

    #[error("decode failed: KKT residual {residual:.3e} above {tol:.3e}")]
    DecodeFailed { residual: f64, tol: f64 },

    #[error("no feasible strategy among candidates; best violation {best_violation:.3e}")]
    NoFeasibleStrategy { best_violation: f64 },

    #[error("no feasible pruning at tolerance {eps:.3e}; last alpha {alpha:.3e}")]
    PruneFailed { eps: f64, alpha: f64 },

    #[error("training diverged: loss became non-finite at epoch {0}")]
    Diverged(usize),

    #[error("sampler feasibility filter exhausted retry budget ({0} attempts)")]
    SamplerExhausted(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("artifact hash mismatch: {0}")]
    HashMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Training-time exact solver: branch-and-bound over the integer variables
//! with a primal active-set QP subsolver, plus a brute-force enumerator for
//! verification.

mod bnb;
mod qp;

pub use bnb::{
    enumerate_oracle, integer_bounds, solve_miqo, solve_miqo_with, BnbOptions, MiqoSolution,
    MiqoStatus,
};
pub use qp::{solve_qp, QpOptions, QpSolution, QpStatus};

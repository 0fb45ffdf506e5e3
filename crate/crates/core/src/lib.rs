//! Learned-strategy online solver for parametric mixed-integer quadratic
//! optimization (MIQO).
//!
//! Offline, the toolkit samples problem parameters, solves each instance
//! exactly, records the optimal *strategy* (tight constraints plus integer
//! assignment), prunes the strategy set, trains a feedforward classifier
//! from parameters to strategies, and caches LDL^T factors of the reduced
//! KKT systems. Online, solving reduces to a network forward pass plus
//! forward/backward substitutions — no branch-and-bound.

pub mod bench;
pub mod error;
pub mod format;
pub mod kkt;
pub mod linalg;
pub mod bank;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod problem;
pub mod sampler;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};

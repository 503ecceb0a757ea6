//! Markets with proportional transaction costs on finite scenario trees.
//!
//! The crate validates bid-ask processes, builds solvency cones and their
//! duals, decides no-arbitrage and robust no-arbitrage by linear programming
//! (with replayable certificates), maximises vector expected utility by
//! scalarisation, checks Pareto maximality, and turns maximisers into
//! (strictly) consistent price processes.

// `!(x >= t)` is used on purpose so NaN fails every check; index loops
// mirror the matrix notation of the algorithms.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod arbitrage;
pub mod attainable;
pub mod cones;
pub mod error;
pub mod experiment;
pub mod fw;
pub mod generate;
pub mod io;
pub mod lp;
pub mod pareto;
pub mod pricing;
pub mod report;
pub mod tolerance;
pub mod tree;
pub mod utility;

pub use error::{Error, Result};
pub use report::{ValidationReport, Violation};
pub use tolerance::Tolerances;

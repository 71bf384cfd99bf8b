//! Tree-structured parallel direct solver for block-tridiagonal systems.
//!
//! The system is split into `N` block rows, one per leaf of a two-tree of
//! `2N - 1` nodes. Each leaf factors its diagonal block once, then `log2 N`
//! rounds of interface solves at increasing tree levels eliminate the
//! couplings. Everything runs on [`netsim`], a deterministic message-passing
//! simulator that charges virtual time for flops and transferred elements,
//! so the cost model can be checked exactly.
//!
//! ```
//! use bandtree::{solve_distributed, CostModel, GeneratorKind, Problem, ProblemShape, SolverOptions};
//!
//! let shape = ProblemShape::new(8, 2, 1, 2).unwrap();
//! let p = Problem::generate(GeneratorKind::TridiagDd, shape, 7).unwrap();
//! let sol = solve_distributed(&shape, p.rows.clone(), CostModel::default(), SolverOptions::default()).unwrap();
//! assert_eq!(sol.gather().rows(), 16);
//! ```

pub mod analysis;
pub mod dense;
pub mod format;
pub mod netsim;
pub mod problem;
pub mod reference;
pub mod solver;
pub mod topology;

pub use dense::{LinalgError, Matrix};
pub use netsim::{CostModel, SimError, SimReport};
pub use problem::{BlockRow, GeneratorKind, Problem, ProblemError};
pub use solver::{solve_distributed, DistributedSolution, DriverError, Schedule, SolveError, SolverOptions};
pub use topology::{ProblemShape, TreeLayout};

//! Constrained Hellinger–Kantorovich barycenters of discrete measures via a soft
//! multi-marginal transport problem over the least cost, solved by annealed
//! log-domain unbalanced Sinkhorn scaling.

pub mod barycenter;
pub mod cost;
pub mod demo;
pub mod entropy;
pub mod error;
pub mod exec;
pub mod measure;
pub mod search;
pub mod solver;
pub mod tensor;

pub use barycenter::{BarycenterProblem, BarycenterSolution, ConicPlan, DiracBarycenter};
pub use cost::{ArgminMode, GroundCostKind, LeastCostTable};
pub use error::{Error, Result};
pub use exec::Exec;
pub use measure::{DiscreteMeasure, GroundGrid, Interval, Point};
pub use solver::{MarginalPenalty, ScalingProblem, SolverConfig, SolverReport, TransportPlan};
pub use tensor::Tensor;

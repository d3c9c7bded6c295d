//! DGD+LOCAL for distributed low-rank matrix factorization.
//!
//! Each of `J` nodes holds a column block `Y_j` of the data, a private factor
//! block `V_j`, and a copy `U^j` of the shared factor. Copies are averaged
//! over a mixing matrix while private blocks take plain gradient steps. The
//! crate implements that iteration, the equivalent gradient descent on the
//! consensus-penalized objective `g`, stepsize bounds, and the landscape
//! tools (Hessian quadratic forms, strict-saddle certificates, balancing)
//! used to check where the iteration ends up.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod matkit;
pub mod objective;
pub mod solvers;
pub mod topology;

pub use error::{Error, Result};
pub use matkit::DenseMatrix;
pub use objective::{DataPartition, FactorPair, NetworkPoint};
pub use topology::{GdWeights, Graph, MixingMatrix, TopologyKind};

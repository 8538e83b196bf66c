//! Optimal perturbations of Markov chains.
//!
//! The crate estimates a column-stochastic matrix `M` from a trajectory by
//! box counting, computes how its stationary vector responds to a
//! perturbation `M + eps*P`, and picks the unit-norm `P` that moves a chosen
//! functional the most. Supported targets are entropy, KL divergence from the
//! unperturbed measure, entropy production, arbitrary linear functionals and
//! residence-time weighted observables of periodic-orbit models. A perturbation
//! can be turned back into a drift field on the state space.
//!
//! Conventions used throughout:
//!
//! ```text
//! M[i, j]   probability of moving from state j to state i (columns sum to 1)
//! M u = u   stationary vector, strictly positive
//! 1^T P = 0, supp(P) in supp(M), |P|_F = 1
//! v1 = G P u,   G = (I - M + u 1^T)^-1
//! ```
//!
//! Vectorization is column-major: `vec(P)[j*N + i] = P[i, j]`.

extern crate blas_src;

pub mod constraint_space;
pub mod dynamics;
mod error;
pub mod functionals;
pub mod io;
pub mod markov_core;
pub mod optimize;
pub mod pipeline;
pub mod reconstruct;
pub mod ulam;
pub mod upo_reduced;

pub use error::{Error, Result};
pub use markov_core::{
    Horizon, PerturbationMatrix, ProbabilityVector, ResponseOperator, StochasticMatrix,
};
pub use optimize::{Direction, LinearCoefficients, MethodTag, OptimizationResult};

//! Learning parametric-output hidden Markov models by decoupling.
//!
//! The output densities are fitted first (as a stationary mixture, see
//! [`mixture`]); given them, the stationary distribution and the transition
//! matrix follow from small convex quadratic programs over singleton and
//! consecutive-pair moments ([`moments`], [`estimators`], [`qp`]). A scaled
//! Baum-Welch implementation ([`baseline`]) serves as the reference method.

pub mod baseline;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod mixture;
pub mod model;
pub mod moments;
pub mod qp;
pub mod quadrature;
pub(crate) mod serde_rows;

pub use error::{Error, Result};
pub use model::{
    GaussianComponent, GaussianOutputModel, DiscreteOutputModel, HmmSpec, Observations,
    OutputModel, TransitionMatrix,
};

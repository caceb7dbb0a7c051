//! Natural policy gradient for concave scalarizations of vector-valued
//! returns in tabular MDPs.
//!
//! The crate provides plug-in and multilevel Monte Carlo estimators for the
//! scalarized gradient, an inner linear recursion that approximately solves
//! the Fisher system, exact oracles for every estimated quantity, and a
//! harness for bias, variance, and convergence experiments.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod mdp;
pub mod npg;
pub mod oracle;
pub mod policy;
pub mod scalarization;

pub use error::{Error, Result};
pub use mdp::{TabularMdp, Trajectory};
pub use policy::PolicyParams;
pub use scalarization::{Family, FloorPolicy, Scalarization, TheoryConstants};

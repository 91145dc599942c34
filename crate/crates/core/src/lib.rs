//! Quasi-periodic response solutions of quasi-periodically forced rotators.
//!
//! The solution `beta(t) = beta0 + b(omega t)` is built from a resummed tree
//! expansion of the Fourier coefficients of `b`, with multiscale propagators
//! and self-energy resummation; `beta0` is then fixed by a variational
//! bifurcation solve. Independent numerical oracles live in [`oracle`].

pub mod error;
pub mod forcing;
pub mod frequency;
pub mod lattice;
pub mod models;
pub mod oracle;
pub mod par;
pub mod problem;
pub mod renorm;
pub mod scalefun;
pub mod trees;
pub mod trig;
pub mod variational;

pub use error::{Error, Result};
pub use lattice::Mode;

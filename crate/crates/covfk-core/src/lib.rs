//! Covariant Feynman-Kac Monte Carlo estimators for semigroups, kernels and
//! operator traces on vector bundles over compact model geometries, with
//! deterministic spectral oracles for cross-validation.

pub mod berezin;
pub mod error;
pub mod fields;
pub mod fk;
pub mod geometry;
pub mod linalg;
pub mod mc;
pub mod paths;
pub mod quadrature;
pub mod rng;
pub mod spectral;
pub mod spin;
pub mod transport;

pub use error::{Error, Result};

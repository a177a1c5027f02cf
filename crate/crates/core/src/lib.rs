//! Bell-basis stochastic series expansion.
//!
//! The sampler works with pairs of bit vectors `(r^z, r^x)` which label both a
//! two-copy Bell state and an unsigned Pauli string. Two models are wired up:
//! the transverse-field Ising chain and the Z2 lattice gauge theory on a torus.

pub mod bell;
pub mod config;
pub mod driver;
pub mod ed;
pub mod error;
pub mod estimators;
pub mod ext_ensemble;
pub mod lattice;
pub mod models;
pub mod sse;
pub mod stats;

pub use error::{Error, Result};

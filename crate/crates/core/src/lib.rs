//! On-the-fly low-rank (DBO) reduced-order modeling of many-species transport.
//!
//! The species field `Φ(x, t) ∈ ℝ^{N × n_s}` is evolved in the compressed form
//! `U Σ Yᵀ` with `U` orthonormal over the periodic domain and `Y` orthonormal
//! over species. A full-order solver and instantaneous PCA serve as references.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fom;
pub mod grid;
pub mod lowrank;
pub mod pipeline;
pub mod snapshot;
pub mod timeint;
pub mod transport;

pub use error::{DboError, Result};
pub use grid::{Grid1D, Quasimatrix};

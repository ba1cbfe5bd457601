//! Hierarchical Fokker-Planck dynamics of a charged rotor on an Aharonov-Bohm
//! ring, in a discretized Wigner representation with periodic boundaries.
//!
//! Natural units throughout: `HBAR = 1`. The ring fixes the energy unit
//! through `omega0 = HBAR / (2 I_S)`.

// negated float comparisons are how NaN inputs get rejected, and index loops
// stay closer to the stencil formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bath;
pub mod cl;
pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod hierarchy;
pub mod integrate;
pub mod linalg;
pub mod observables;
pub mod risb;
pub mod sector;

pub use error::{Error, Result};

/// Reduced Planck constant. Fixed library-wide.
pub const HBAR: f64 = 1.0;

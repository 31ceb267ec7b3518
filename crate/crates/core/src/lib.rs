//! Numerical phase-space laboratory.
//!
//! Gabor analysis on periodic grids, Weyl quantization, symplectic flows and
//! Schrödinger propagators, together with desk-scale checks of
//! almost-diagonalization, dispersive, restriction and microlocal estimates.

// Negated float comparisons reject NaN on purpose; index loops mirror matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

// Links the BLAS backend used by ndarray's matrix products.
extern crate blas_src;

pub mod almost_diag;
pub mod cli;
pub mod corpus;
pub mod estimates;
pub mod microlocal;
pub mod par;
pub mod phase_space;
pub mod propagator;
pub mod symplectic_flow;
pub mod weyl_quant;

pub use num_complex::Complex64;

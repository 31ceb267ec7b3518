//! Grids, sampled functions, phase-space shifts, the STFT and its inverse,
//! and the mixed Lebesgue norms behind `M^{p,q}` and `W^{p,q}`.

mod fourier;
mod grid;
pub mod io;
mod lattice;
mod norms;
mod stft;
mod window;

#[cfg(test)]
mod tests;

use thiserror::Error;

pub use fourier::{apply_multiplier, fourier_transform, inverse_fourier_transform, translate};
#[allow(unused_imports)]
pub(crate) use fourier::{bin_frequency, fft_nd};
pub use grid::{Grid, SampledFunction};
pub use lattice::{PhaseArray, PhaseLattice};
#[allow(unused_imports)]
pub(crate) use norms::lp_sum;
pub use norms::{lp_norm, mixed_norm, modulation_norm, weighted_sobolev_norm, wiener_amalgam_norm, Axis, Exponent};
pub use stft::{stft, stft_inverse};
pub use window::{phase_shift, PhasePoint, Window};

#[derive(Debug, Error)]
pub enum PhaseSpaceError {
    #[error("unsupported dimension {0}; only d = 1 and d = 2 are available")]
    Dimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} values, found {found}")]
    Length { expected: usize, found: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("window has zero norm")]
    ZeroWindow,
    #[error("window must be normalized to (2π)^(-d/2)")]
    UnnormalizedWindow,
    #[error("function and window live on different grids")]
    GridMismatch,
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("lattice node {node} on the {axis} axis exceeds the grid limit {limit}")]
    LatticeExtent { axis: &'static str, node: f64, limit: f64 },
    #[error("exponent {0} outside [1, ∞]")]
    InvalidExponent(f64),
    #[error("malformed binary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

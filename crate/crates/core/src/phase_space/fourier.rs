use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{Grid, SampledFunction};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized in-place DFT along every axis of a `points^dim` array.
pub(crate) fn fft_nd(data: &mut [Complex64], points: usize, dim: usize, inverse: bool) {
    let fft = plan(points, inverse);
    match dim {
        1 => fft.process(data),
        _ => {
            for row in data.chunks_mut(points) {
                fft.process(row);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); points];
            for j in 0..points {
                for i in 0..points {
                    col[i] = data[i * points + j];
                }
                fft.process(&mut col);
                for i in 0..points {
                    data[i * points + j] = col[i];
                }
            }
        }
    }
}

fn parity(idx: usize, grid: &Grid, offset: usize) -> f64 {
    let n = grid.points();
    let s = match grid.dim() {
        1 => idx + offset,
        _ => idx / n + idx % n + 2 * offset,
    };
    if s % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Samples of `Ff(ξ) = ∫ e^{-ix·ξ} f(x) dx` on the dual grid.
pub fn fourier_transform(f: &SampledFunction) -> SampledFunction {
    let grid = *f.grid();
    let half = grid.points() / 2;
    let mut data: Vec<Complex64> = f
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| v * parity(k, &grid, 0))
        .collect();
    fft_nd(&mut data, grid.points(), grid.dim(), false);
    let cell = grid.cell();
    for (m, v) in data.iter_mut().enumerate() {
        *v *= cell * parity(m, &grid, half);
    }
    SampledFunction::from_raw(grid.dual(), data)
}

/// Inverse of [`fourier_transform`]: takes samples on a dual grid and returns
/// `(2π)^{-d} ∫ e^{ix·ξ} F(ξ) dξ` on the spatial grid.
pub fn inverse_fourier_transform(spectrum: &SampledFunction) -> SampledFunction {
    let dual = *spectrum.grid();
    let grid = dual.dual();
    let half = dual.points() / 2;
    let mut data: Vec<Complex64> = spectrum
        .values()
        .iter()
        .enumerate()
        .map(|(m, v)| v * parity(m, &dual, half))
        .collect();
    fft_nd(&mut data, dual.points(), dual.dim(), true);
    let scale = (dual.spacing() / (2.0 * PI)).powi(dual.dim() as i32);
    for (k, v) in data.iter_mut().enumerate() {
        *v *= scale * parity(k, &grid, 0);
    }
    SampledFunction::from_raw(grid, data)
}

/// Angular frequency attached to raw DFT bin `m` (Nyquist mapped to `-π/h`).
pub(crate) fn bin_frequency(m: usize, points: usize, spacing: f64) -> f64 {
    let n = points as i64;
    let mut k = m as i64;
    if k >= n / 2 {
        k -= n;
    }
    2.0 * PI * k as f64 / (n as f64 * spacing)
}

/// Apply a Fourier multiplier `m(ξ)` to `f` (periodic convolution).
pub fn apply_multiplier(f: &SampledFunction, symbol: impl Fn(&[f64]) -> Complex64) -> SampledFunction {
    let grid = *f.grid();
    let n = grid.points();
    let h = grid.spacing();
    let mut data = f.values().to_vec();
    fft_nd(&mut data, n, grid.dim(), false);
    let freqs: Vec<f64> = (0..n).map(|m| bin_frequency(m, n, h)).collect();
    let inv = 1.0 / grid.len() as f64;
    match grid.dim() {
        1 => {
            for (m, v) in data.iter_mut().enumerate() {
                *v *= symbol(&[freqs[m]]) * inv;
            }
        }
        _ => {
            for (idx, v) in data.iter_mut().enumerate() {
                *v *= symbol(&[freqs[idx / n], freqs[idx % n]]) * inv;
            }
        }
    }
    fft_nd(&mut data, n, grid.dim(), true);
    SampledFunction::from_raw(grid, data)
}

/// Exact periodic translation `f(· − shift)` realised as a Fourier-side phase.
pub fn translate(f: &SampledFunction, shift: &[f64]) -> SampledFunction {
    if shift.iter().all(|s| *s == 0.0) {
        return f.clone();
    }
    let s0 = shift[0];
    let s1 = shift.get(1).copied().unwrap_or(0.0);
    apply_multiplier(f, |xi| {
        let phase = match xi.len() {
            1 => -xi[0] * s0,
            _ => -(xi[0] * s0 + xi[1] * s1),
        };
        Complex64::from_polar(1.0, phase)
    })
}

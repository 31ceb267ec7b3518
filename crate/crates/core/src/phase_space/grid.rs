use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::PhaseSpaceError;

/// Uniform periodic grid on `[-L, L)^d` with `N` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_extent: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, half_extent: f64, points: usize) -> Result<Self, PhaseSpaceError> {
        if dim != 1 && dim != 2 {
            return Err(PhaseSpaceError::Dimension(dim));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(PhaseSpaceError::InvalidGrid(format!(
                "half extent must be positive, got {half_extent}"
            )));
        }
        if points < 2 || !points.is_multiple_of(2) {
            return Err(PhaseSpaceError::InvalidGrid(format!(
                "points per axis must be even and >= 2, got {points}"
            )));
        }
        Ok(Self {
            dim,
            half_extent,
            points,
        })
    }

    pub fn line(half_extent: f64, points: usize) -> Result<Self, PhaseSpaceError> {
        Self::new(1, half_extent, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Total number of samples, `N^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.points as f64
    }

    pub fn dual_spacing(&self) -> f64 {
        PI / self.half_extent
    }

    /// Frequencies live in `[-max_frequency, max_frequency)`.
    pub fn max_frequency(&self) -> f64 {
        PI / self.spacing()
    }

    pub fn cell(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn dual_cell(&self) -> f64 {
        self.dual_spacing().powi(self.dim as i32)
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        -self.half_extent + k as f64 * self.spacing()
    }

    pub fn frequency(&self, m: usize) -> f64 {
        (m as f64 - (self.points / 2) as f64) * self.dual_spacing()
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.coordinate(k)).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.points).map(|m| self.frequency(m)).collect()
    }

    /// The frequency grid, itself a `Grid` with half-extent `π/h`.
    pub fn dual(&self) -> Grid {
        Grid {
            dim: self.dim,
            half_extent: self.max_frequency(),
            points: self.points,
        }
    }

    /// Same grid up to floating-point round-off in the extent.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.points == other.points
            && ((self.half_extent - other.half_extent).abs() <= 1e-12 * self.half_extent)
    }

    /// Coordinates of flat sample `idx`; the second entry is zero when d = 1.
    pub fn sample_point(&self, idx: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.coordinate(idx), 0.0],
            _ => [self.coordinate(idx / self.points), self.coordinate(idx % self.points)],
        }
    }

    /// Nearest grid index (periodic) to coordinate `x` along one axis.
    pub fn nearest_index(&self, x: f64) -> usize {
        let n = self.points as i64;
        let k = ((x + self.half_extent) / self.spacing()).round() as i64;
        k.rem_euclid(n) as usize
    }
}

/// Complex samples on a grid, stored row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: Grid,
    values: Vec<Complex64>,
}

impl SampledFunction {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self, PhaseSpaceError> {
        if values.len() != grid.len() {
            return Err(PhaseSpaceError::Length {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(PhaseSpaceError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Sample `f` at every grid point; the closure receives `d` coordinates.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> Complex64) -> Self {
        let d = grid.dim();
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.sample_point(i);
                f(&p[..d])
            })
            .collect();
        Self { grid, values }
    }

    pub fn from_real_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, |p| Complex64::new(f(p), 0.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// `h^d Σ f conj(g)`.
    pub fn inner(&self, other: &SampledFunction) -> Complex64 {
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        s * self.grid.cell()
    }

    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &SampledFunction) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SampledFunction) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &SampledFunction) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &SampledFunction, op: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| op(a, b)).collect(),
        }
    }

    /// Pointwise multiplication by a function of position.
    pub fn multiplied_by(&self, weight: impl Fn(&[f64]) -> Complex64) -> Self {
        let d = self.grid.dim();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let p = self.grid.sample_point(i);
                v * weight(&p[..d])
            })
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    /// Relative L² distance `‖self − other‖ / ‖other‖`.
    pub fn relative_error(&self, reference: &SampledFunction) -> f64 {
        let r = reference.norm();
        let e = self.sub(reference).norm();
        if r == 0.0 {
            e
        } else {
            e / r
        }
    }

    /// Largest magnitude among samples on the outermost ring of the grid.
    pub fn boundary_magnitude(&self) -> f64 {
        let n = self.grid.points();
        let mut m = 0.0f64;
        for (i, v) in self.values.iter().enumerate() {
            let on_edge = match self.grid.dim() {
                1 => i == 0 || i == n - 1,
                _ => {
                    let (a, b) = (i / n, i % n);
                    a == 0 || b == 0 || a == n - 1 || b == n - 1
                }
            };
            if on_edge {
                m = m.max(v.norm());
            }
        }
        m
    }
}

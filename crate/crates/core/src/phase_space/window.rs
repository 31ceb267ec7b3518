use std::f64::consts::PI;
use std::ops::{Add, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fourier::translate;
use super::grid::{Grid, SampledFunction};
use super::PhaseSpaceError;

/// Relative magnitude below which window samples are treated as outside the support.
const SUPPORT_FLOOR: f64 = 1e-18;

/// A phase-space point `z = (x, ξ)`. For d = 1 only the first entries are used.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: [f64; 2],
    pub xi: [f64; 2],
}

impl PhasePoint {
    pub fn line(x: f64, xi: f64) -> Self {
        Self {
            x: [x, 0.0],
            xi: [xi, 0.0],
        }
    }

    pub fn plane(x: [f64; 2], xi: [f64; 2]) -> Self {
        Self { x, xi }
    }

    pub fn from_slices(x: &[f64], xi: &[f64]) -> Self {
        let mut p = Self::default();
        p.x[..x.len()].copy_from_slice(x);
        p.xi[..xi.len()].copy_from_slice(xi);
        p
    }

    pub fn origin() -> Self {
        Self::default()
    }

    pub fn norm(&self) -> f64 {
        (self.x[0] * self.x[0] + self.x[1] * self.x[1] + self.xi[0] * self.xi[0] + self.xi[1] * self.xi[1]).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.xi).all(|v| v.is_finite())
    }

    /// Flattened `(x, ξ)` of length `2d`.
    pub fn to_vec(&self, dim: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * dim);
        v.extend_from_slice(&self.x[..dim]);
        v.extend_from_slice(&self.xi[..dim]);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let d = v.len() / 2;
        Self::from_slices(&v[..d], &v[d..])
    }
}

impl Add for PhasePoint {
    type Output = PhasePoint;
    fn add(self, o: PhasePoint) -> PhasePoint {
        PhasePoint {
            x: [self.x[0] + o.x[0], self.x[1] + o.x[1]],
            xi: [self.xi[0] + o.xi[0], self.xi[1] + o.xi[1]],
        }
    }
}

impl Sub for PhasePoint {
    type Output = PhasePoint;
    fn sub(self, o: PhasePoint) -> PhasePoint {
        PhasePoint {
            x: [self.x[0] - o.x[0], self.x[1] - o.x[1]],
            xi: [self.xi[0] - o.xi[0], self.xi[1] - o.xi[1]],
        }
    }
}

/// Analysis window. Normalized windows satisfy `‖g‖₂ = (2π)^{-d/2}`.
#[derive(Debug, Clone)]
pub struct Window {
    base: SampledFunction,
    normalized: bool,
    reach: f64,
}

impl Window {
    /// `c·exp(-|y|²/(2 width²))`, normalized.
    pub fn gaussian(grid: Grid, width: f64) -> Self {
        let base = SampledFunction::from_real_fn(grid, |y| {
            let r2: f64 = y.iter().map(|v| v * v).sum();
            (-r2 / (2.0 * width * width)).exp()
        });
        Self::from_samples(base, true).expect("gaussian window is finite and nonzero")
    }

    /// The default unit-width Gaussian window.
    pub fn standard(grid: Grid) -> Self {
        Self::gaussian(grid, 1.0)
    }

    pub fn from_samples(base: SampledFunction, normalize: bool) -> Result<Self, PhaseSpaceError> {
        let n = base.norm();
        if n == 0.0 {
            return Err(PhaseSpaceError::ZeroWindow);
        }
        let base = if normalize {
            let target = (2.0 * PI).powf(-(base.grid().dim() as f64) / 2.0);
            base.scaled(Complex64::new(target / n, 0.0))
        } else {
            base
        };
        let reach = support_reach(&base);
        let normalized = normalize || {
            let target = (2.0 * PI).powf(-(base.grid().dim() as f64) / 2.0);
            ((base.norm() - target) / target).abs() <= 1e-10
        };
        Ok(Self {
            base,
            normalized,
            reach,
        })
    }

    pub fn base(&self) -> &SampledFunction {
        &self.base
    }

    pub fn grid(&self) -> &Grid {
        self.base.grid()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Radius outside which the window is below `1e-18` of its peak.
    pub fn reach(&self) -> f64 {
        self.reach
    }
}

fn support_reach(g: &SampledFunction) -> f64 {
    let grid = g.grid();
    let d = grid.dim();
    let peak = g.max_abs();
    let mut reach = 0.0f64;
    for (i, v) in g.values().iter().enumerate() {
        if v.norm() > SUPPORT_FLOOR * peak {
            let p = grid.sample_point(i);
            for c in &p[..d] {
                reach = reach.max(c.abs());
            }
        }
    }
    reach + grid.spacing()
}

/// `π(x, ξ) g(y) = e^{i y·ξ} g(y − x)`, translation done exactly in frequency.
pub fn phase_shift(g: &SampledFunction, z: &PhasePoint) -> SampledFunction {
    let grid = *g.grid();
    let d = grid.dim();
    if z.x[..d].iter().any(|x| x.abs() > grid.half_extent() / 2.0) {
        log::warn!(
            "phase shift by x = {:?} exceeds half the grid extent; periodic wrap may contaminate",
            &z.x[..d]
        );
    }
    let moved = translate(g, &z.x[..d]);
    if z.xi[..d].iter().all(|v| *v == 0.0) {
        return moved;
    }
    let xi = z.xi;
    moved.multiplied_by(|y| {
        let phase: f64 = y.iter().zip(&xi).map(|(a, b)| a * b).sum();
        Complex64::from_polar(1.0, phase)
    })
}

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::window::PhasePoint;
use super::PhaseSpaceError;

/// Rectangular phase-space lattice: per-axis nodes in x and in ξ, shared
/// across axes when d = 2. Enumeration is x-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLattice {
    dim: usize,
    step_x: f64,
    step_xi: f64,
    x_nodes: Vec<f64>,
    xi_nodes: Vec<f64>,
}

fn symmetric_nodes(step: f64, limit: f64, closed: bool) -> Vec<f64> {
    let kmax = (limit / step).floor() as i64 + 1;
    (-kmax..=kmax)
        .map(|k| k as f64 * step)
        .filter(|v| {
            if closed {
                v.abs() <= limit * (1.0 + 1e-12)
            } else {
                v.abs() < limit
            }
        })
        .collect()
}

impl PhaseLattice {
    /// Nodes `k·δx` with `|k·δx| < L` and `k·δξ` with `|k·δξ| < π/h`.
    pub fn covering(grid: &Grid, step_x: f64, step_xi: f64) -> Result<Self, PhaseSpaceError> {
        check_steps(step_x, step_xi)?;
        Ok(Self {
            dim: grid.dim(),
            step_x,
            step_xi,
            x_nodes: symmetric_nodes(step_x, grid.half_extent(), false),
            xi_nodes: symmetric_nodes(step_xi, grid.max_frequency(), false),
        })
    }

    /// Default desk lattice, `δx = δξ = 0.5`.
    pub fn default_for(grid: &Grid) -> Self {
        Self::covering(grid, 0.5, 0.5).expect("positive steps")
    }

    /// Nodes `k·δ` with `|k·δ| ≤ radius` on each side.
    pub fn centered(
        dim: usize,
        step_x: f64,
        x_radius: f64,
        step_xi: f64,
        xi_radius: f64,
    ) -> Result<Self, PhaseSpaceError> {
        check_steps(step_x, step_xi)?;
        Ok(Self {
            dim,
            step_x,
            step_xi,
            x_nodes: symmetric_nodes(step_x, x_radius, true),
            xi_nodes: symmetric_nodes(step_xi, xi_radius, true),
        })
    }

    pub fn from_nodes(
        dim: usize,
        step_x: f64,
        x_nodes: Vec<f64>,
        step_xi: f64,
        xi_nodes: Vec<f64>,
    ) -> Result<Self, PhaseSpaceError> {
        check_steps(step_x, step_xi)?;
        if x_nodes.is_empty() || xi_nodes.is_empty() {
            return Err(PhaseSpaceError::InvalidLattice("empty node list".into()));
        }
        Ok(Self {
            dim,
            step_x,
            step_xi,
            x_nodes,
            xi_nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_x(&self) -> f64 {
        self.step_x
    }

    pub fn step_xi(&self) -> f64 {
        self.step_xi
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.x_nodes
    }

    pub fn xi_nodes(&self) -> &[f64] {
        &self.xi_nodes
    }

    pub fn len_x(&self) -> usize {
        self.x_nodes.len().pow(self.dim as u32)
    }

    pub fn len_xi(&self) -> usize {
        self.xi_nodes.len().pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.len_x() * self.len_xi()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `δx^d · δξ^d`.
    pub fn cell_weight(&self) -> f64 {
        (self.step_x * self.step_xi).powi(self.dim as i32)
    }

    pub fn x_weight(&self) -> f64 {
        self.step_x.powi(self.dim as i32)
    }

    pub fn xi_weight(&self) -> f64 {
        self.step_xi.powi(self.dim as i32)
    }

    fn node_pair(nodes: &[f64], dim: usize, i: usize) -> [f64; 2] {
        match dim {
            1 => [nodes[i], 0.0],
            _ => [nodes[i / nodes.len()], nodes[i % nodes.len()]],
        }
    }

    pub fn x_point(&self, ix: usize) -> [f64; 2] {
        Self::node_pair(&self.x_nodes, self.dim, ix)
    }

    pub fn xi_point(&self, j: usize) -> [f64; 2] {
        Self::node_pair(&self.xi_nodes, self.dim, j)
    }

    pub fn point(&self, ix: usize, j: usize) -> PhasePoint {
        PhasePoint::plane(self.x_point(ix), self.xi_point(j))
    }

    pub fn point_at(&self, flat: usize) -> PhasePoint {
        let nxi = self.len_xi();
        self.point(flat / nxi, flat % nxi)
    }

    pub fn points(&self) -> Vec<PhasePoint> {
        (0..self.len()).map(|i| self.point_at(i)).collect()
    }

    /// Flat index of the node nearest to `z`, if `z` lies on the lattice within `tol`.
    pub fn locate(&self, z: &PhasePoint, tol: f64) -> Option<usize> {
        let find = |nodes: &[f64], v: f64| nodes.iter().position(|n| (n - v).abs() <= tol);
        let (ix, j) = match self.dim {
            1 => (find(&self.x_nodes, z.x[0])?, find(&self.xi_nodes, z.xi[0])?),
            _ => {
                let nx = self.x_nodes.len();
                let nxi = self.xi_nodes.len();
                (
                    find(&self.x_nodes, z.x[0])? * nx + find(&self.x_nodes, z.x[1])?,
                    find(&self.xi_nodes, z.xi[0])? * nxi + find(&self.xi_nodes, z.xi[1])?,
                )
            }
        };
        Some(ix * self.len_xi() + j)
    }

    /// Reject lattices reaching beyond the grid's spatial or frequency extent.
    pub fn check_within(&self, grid: &Grid) -> Result<(), PhaseSpaceError> {
        if self.dim != grid.dim() {
            return Err(PhaseSpaceError::InvalidLattice(format!(
                "lattice dimension {} does not match grid dimension {}",
                self.dim,
                grid.dim()
            )));
        }
        let lx = grid.half_extent() * (1.0 + 1e-12);
        let lxi = grid.max_frequency() * (1.0 + 1e-12);
        if let Some(v) = self.x_nodes.iter().find(|v| v.abs() > lx) {
            return Err(PhaseSpaceError::LatticeExtent {
                axis: "x",
                node: *v,
                limit: grid.half_extent(),
            });
        }
        if let Some(v) = self.xi_nodes.iter().find(|v| v.abs() > lxi) {
            return Err(PhaseSpaceError::LatticeExtent {
                axis: "xi",
                node: *v,
                limit: grid.max_frequency(),
            });
        }
        Ok(())
    }
}

fn check_steps(step_x: f64, step_xi: f64) -> Result<(), PhaseSpaceError> {
    if !(step_x > 0.0 && step_xi > 0.0 && step_x.is_finite() && step_xi.is_finite()) {
        return Err(PhaseSpaceError::InvalidLattice(format!(
            "steps must be positive, got ({step_x}, {step_xi})"
        )));
    }
    Ok(())
}

/// Values on a phase lattice, flat index `ix * len_xi + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseArray {
    lattice: PhaseLattice,
    values: Vec<Complex64>,
}

impl PhaseArray {
    pub fn new(lattice: PhaseLattice, values: Vec<Complex64>) -> Result<Self, PhaseSpaceError> {
        if values.len() != lattice.len() {
            return Err(PhaseSpaceError::Length {
                expected: lattice.len(),
                found: values.len(),
            });
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: PhaseLattice) -> Self {
        let n = lattice.len();
        Self {
            lattice,
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn lattice(&self) -> &PhaseLattice {
        &self.lattice
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn get(&self, ix: usize, j: usize) -> Complex64 {
        self.values[ix * self.lattice.len_xi() + j]
    }

    /// `(Σ |F|² δx^d δξ^d)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.lattice.cell_weight()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Keep values where `keep(z)` holds, zero elsewhere.
    pub fn masked(&self, keep: impl Fn(&PhasePoint) -> bool) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if keep(&self.lattice.point_at(i)) {
                    *v
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Self {
            lattice: self.lattice.clone(),
            values,
        }
    }
}

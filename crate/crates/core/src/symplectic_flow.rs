//! Quadratic and tame Hamiltonian flows, their Jacobians, block structure,
//! and the sampled lower bound on `|det ∂x/∂η|`.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::phase_space::io::CsvTable;
use crate::phase_space::PhasePoint;

/// Below this `|det B_t|` a time is treated as exceptional.
pub const EXCEPTIONAL_DET: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("matrix must be {expected}x{expected}, got {rows}x{cols}")]
    Shape { expected: usize, rows: usize, cols: usize },
    #[error("quadratic form is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("smooth terms are only available in dimension 1")]
    Dimension,
    #[error("step count must be at least 1")]
    Steps,
    #[error("non-finite state at t = {time} after {step} steps: {state:?}")]
    NonFinite { time: f64, step: usize, state: Vec<f64> },
    #[error("empty sample lattice")]
    EmptySamples,
}

/// `J = [[0, I], [−I, 0]]`.
pub fn standard_form(dim: usize) -> Array2<f64> {
    let mut j = Array2::zeros((2 * dim, 2 * dim));
    for i in 0..dim {
        j[[i, dim + i]] = 1.0;
        j[[dim + i, i]] = -1.0;
    }
    j
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn det_small(m: &Array2<f64>) -> f64 {
    match m.nrows() {
        1 => m[[0, 0]],
        2 => m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]],
        _ => unreachable!("blocks are at most 2x2"),
    }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm1 * scale > 0.125 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = a * scale;
    let mut result = Array2::eye(n);
    let mut term = Array2::eye(n);
    for k in 1..=18 {
        term = term.dot(&b) / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// `a₂(z) = ½ z·Qz` with symmetric `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticHamiltonian {
    dim: usize,
    q: Array2<f64>,
}

impl QuadraticHamiltonian {
    pub fn new(q: Array2<f64>) -> Result<Self, FlowError> {
        let (r, c) = q.dim();
        if r != c || r % 2 != 0 || r == 0 || r > 4 {
            return Err(FlowError::Shape {
                expected: r.max(2),
                rows: r,
                cols: c,
            });
        }
        let asym = max_abs(&(&q - &q.t()));
        if asym > 1e-12 {
            return Err(FlowError::NotSymmetric(asym));
        }
        Ok(Self { dim: r / 2, q })
    }

    /// `|ξ|²/2`.
    pub fn free_particle(dim: usize) -> Self {
        let mut q = Array2::zeros((2 * dim, 2 * dim));
        for i in dim..2 * dim {
            q[[i, i]] = 1.0;
        }
        Self { dim, q }
    }

    /// `(|x|² + |ξ|²)/2`.
    pub fn harmonic_oscillator(dim: usize) -> Self {
        Self {
            dim,
            q: Array2::eye(2 * dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let n = 2 * self.dim;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += z[i] * self.q[[i, j]] * z[j];
            }
        }
        0.5 * s
    }

    /// Weyl symbol at `(x, ξ)` for d = 1.
    pub fn symbol_1d(&self, x: f64, xi: f64) -> f64 {
        self.value(&[x, xi])
    }

    /// Kinetic block `Q_ξξ` is positive definite.
    pub fn has_positive_kinetic_block(&self) -> bool {
        let d = self.dim;
        let k = self.q.slice(s![d.., d..]).to_owned();
        match d {
            1 => k[[0, 0]] > 0.0,
            _ => k[[0, 0]] > 0.0 && det_small(&k) > 0.0,
        }
    }
}

/// `2d × 2d` real matrix with blocks `(A, B; C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    dim: usize,
    m: Array2<f64>,
}

impl SymplecticMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self, FlowError> {
        let (r, c) = m.dim();
        if r != c || r % 2 != 0 || r == 0 {
            return Err(FlowError::Shape {
                expected: r.max(2),
                rows: r,
                cols: c,
            });
        }
        Ok(Self { dim: r / 2, m })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            m: Array2::eye(2 * dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    fn block(&self, r: usize, c: usize) -> Array2<f64> {
        let d = self.dim;
        self.m.slice(s![r * d..(r + 1) * d, c * d..(c + 1) * d]).to_owned()
    }

    pub fn a(&self) -> Array2<f64> {
        self.block(0, 0)
    }

    pub fn b(&self) -> Array2<f64> {
        self.block(0, 1)
    }

    pub fn c(&self) -> Array2<f64> {
        self.block(1, 0)
    }

    pub fn d(&self) -> Array2<f64> {
        self.block(1, 1)
    }

    /// `‖SᵀJS − J‖_max`.
    pub fn symplectic_defect(&self) -> f64 {
        let j = standard_form(self.dim);
        max_abs(&(self.m.t().dot(&j).dot(&self.m) - &j))
    }

    pub fn apply(&self, z: &PhasePoint) -> PhasePoint {
        let v = z.to_vec(self.dim);
        let out: Vec<f64> = (0..2 * self.dim)
            .map(|i| (0..2 * self.dim).map(|j| self.m[[i, j]] * v[j]).sum())
            .collect();
        PhasePoint::from_vec(&out)
    }

    /// `S^{-1} = −J Sᵀ J`.
    pub fn inverse(&self) -> Self {
        let j = standard_form(self.dim);
        Self {
            dim: self.dim,
            m: -j.dot(&self.m.t()).dot(&j),
        }
    }

    pub fn compose(&self, other: &SymplecticMatrix) -> Self {
        Self {
            dim: self.dim,
            m: self.m.dot(&other.m),
        }
    }
}

/// `S_t = exp(t J Q)`.
pub fn quadratic_flow(h: &QuadraticHamiltonian, t: f64) -> SymplecticMatrix {
    let gen = standard_form(h.dim).dot(&h.q) * t;
    SymplecticMatrix {
        dim: h.dim,
        m: expm(&gen),
    }
}

/// Determinant of the upper-right block, sign preserved.
pub fn det_b(s: &SymplecticMatrix) -> f64 {
    det_small(&s.b())
}

pub fn is_exceptional(s: &SymplecticMatrix) -> bool {
    det_b(s).abs() < EXCEPTIONAL_DET
}

/// Bounded smooth perturbations on `R²` (d = 1), evaluated analytically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothTerm {
    /// `A sin(k x)`
    SinX { amplitude: f64, frequency: f64 },
    /// `A cos(k x)`
    CosX { amplitude: f64, frequency: f64 },
    /// `A sin x sin ξ`
    SinXSinXi { amplitude: f64 },
}

impl SmoothTerm {
    pub fn value(&self, x: f64, xi: f64) -> f64 {
        match *self {
            SmoothTerm::SinX { amplitude, frequency } => amplitude * (frequency * x).sin(),
            SmoothTerm::CosX { amplitude, frequency } => amplitude * (frequency * x).cos(),
            SmoothTerm::SinXSinXi { amplitude } => amplitude * x.sin() * xi.sin(),
        }
    }

    fn gradient(&self, x: f64, xi: f64) -> [f64; 2] {
        match *self {
            SmoothTerm::SinX { amplitude, frequency } => [amplitude * frequency * (frequency * x).cos(), 0.0],
            SmoothTerm::CosX { amplitude, frequency } => [-amplitude * frequency * (frequency * x).sin(), 0.0],
            SmoothTerm::SinXSinXi { amplitude } => [amplitude * x.cos() * xi.sin(), amplitude * x.sin() * xi.cos()],
        }
    }

    fn hessian(&self, x: f64, xi: f64) -> [[f64; 2]; 2] {
        match *self {
            SmoothTerm::SinX { amplitude, frequency } => [
                [-amplitude * frequency * frequency * (frequency * x).sin(), 0.0],
                [0.0, 0.0],
            ],
            SmoothTerm::CosX { amplitude, frequency } => [
                [-amplitude * frequency * frequency * (frequency * x).cos(), 0.0],
                [0.0, 0.0],
            ],
            SmoothTerm::SinXSinXi { amplitude } => {
                let c = amplitude * x.cos() * xi.cos();
                [
                    [-amplitude * x.sin() * xi.sin(), c],
                    [c, -amplitude * x.sin() * xi.sin()],
                ]
            }
        }
    }

    /// Upper bound for every derivative of the given total order.
    pub fn derivative_bound(&self, order: u32) -> f64 {
        match *self {
            SmoothTerm::SinX { amplitude, frequency } | SmoothTerm::CosX { amplitude, frequency } => {
                amplitude.abs() * frequency.abs().powi(order as i32)
            }
            SmoothTerm::SinXSinXi { amplitude } => amplitude.abs(),
        }
    }
}

/// Declared `C_{α,β}` bound for all derivatives of one total order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBound {
    pub order: u32,
    pub bound: f64,
}

/// Evaluators of a (possibly time-dependent) Hamiltonian on `R^{2d}`.
pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, z: &[f64]) -> f64;
    fn gradient(&self, t: f64, z: &[f64]) -> [f64; 4];
    fn hessian(&self, t: f64, z: &[f64]) -> [[f64; 4]; 4];
}

/// `a = a₂ + Σ terms`, with terms restricted to d = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TameHamiltonian {
    dim: usize,
    quadratic: Option<QuadraticHamiltonian>,
    terms: Vec<SmoothTerm>,
    bounds: Vec<DerivativeBound>,
}

impl TameHamiltonian {
    pub fn new(dim: usize, quadratic: Option<QuadraticHamiltonian>, terms: Vec<SmoothTerm>) -> Result<Self, FlowError> {
        if !terms.is_empty() && dim != 1 {
            return Err(FlowError::Dimension);
        }
        if let Some(q) = &quadratic {
            if q.dim() != dim {
                return Err(FlowError::Dimension);
            }
        }
        let bounds = (2..=4)
            .map(|order| {
                let quad = if order == 2 {
                    quadratic.as_ref().map(|q| max_abs(q.matrix())).unwrap_or(0.0)
                } else {
                    0.0
                };
                DerivativeBound {
                    order,
                    bound: quad + terms.iter().map(|t| t.derivative_bound(order)).sum::<f64>(),
                }
            })
            .collect();
        Ok(Self {
            dim,
            quadratic,
            terms,
            bounds,
        })
    }

    pub fn quadratic(q: QuadraticHamiltonian) -> Self {
        let dim = q.dim();
        Self::new(dim, Some(q), Vec::new()).expect("pure quadratic is valid in any dimension")
    }

    pub fn quadratic_part(&self) -> Option<&QuadraticHamiltonian> {
        self.quadratic.as_ref()
    }

    pub fn terms(&self) -> &[SmoothTerm] {
        &self.terms
    }

    pub fn bounds(&self) -> &[DerivativeBound] {
        &self.bounds
    }

    /// Symbol value at `(x, ξ)` for d = 1.
    pub fn symbol_1d(&self, x: f64, xi: f64) -> f64 {
        self.value(0.0, &[x, xi])
    }
}

impl Hamiltonian for TameHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        let mut v = self.quadratic.as_ref().map(|q| q.value(z)).unwrap_or(0.0);
        for term in &self.terms {
            v += term.value(z[0], z[1]);
        }
        v
    }

    fn gradient(&self, _t: f64, z: &[f64]) -> [f64; 4] {
        let n = 2 * self.dim;
        let mut g = [0.0; 4];
        if let Some(q) = &self.quadratic {
            for i in 0..n {
                g[i] = (0..n).map(|j| q.q[[i, j]] * z[j]).sum();
            }
        }
        for term in &self.terms {
            let d = term.gradient(z[0], z[1]);
            g[0] += d[0];
            g[1] += d[1];
        }
        g
    }

    fn hessian(&self, _t: f64, z: &[f64]) -> [[f64; 4]; 4] {
        let n = 2 * self.dim;
        let mut h = [[0.0; 4]; 4];
        if let Some(q) = &self.quadratic {
            for i in 0..n {
                for j in 0..n {
                    h[i][j] = q.q[[i, j]];
                }
            }
        }
        for term in &self.terms {
            let d = term.hessian(z[0], z[1]);
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] += d[i][j];
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDiagnostics {
    pub steps: usize,
    /// `|det M(t) − 1|`.
    pub det_deviation: f64,
    pub symplectic_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub endpoint: PhasePoint,
    pub jacobian: Array2<f64>,
    pub diagnostics: FlowDiagnostics,
}

impl FlowResult {
    /// `∂x/∂η`, the upper-right block of the Jacobian.
    pub fn position_momentum_block(&self) -> Array2<f64> {
        let d = self.jacobian.nrows() / 2;
        self.jacobian.slice(s![..d, d..]).to_owned()
    }

    pub fn jacobian_as_symplectic(&self) -> SymplecticMatrix {
        SymplecticMatrix {
            dim: self.jacobian.nrows() / 2,
            m: self.jacobian.clone(),
        }
    }
}

/// Packed state: `z` (2d entries) followed by `M` row-major.
#[derive(Clone, Copy)]
struct State {
    n: usize,
    v: [f64; 20],
}

impl State {
    fn derivative(&self, a: &dyn Hamiltonian, t: f64) -> State {
        let n = self.n;
        let d = n / 2;
        let z = &self.v[..n];
        let g = a.gradient(t, z);
        let h = a.hessian(t, z);
        let mut out = State { n, v: [0.0; 20] };
        // ż = J∇a: ẋ = ∂_ξ a, ξ̇ = −∂_x a
        for i in 0..d {
            out.v[i] = g[d + i];
            out.v[d + i] = -g[i];
        }
        // Ṁ = J H M
        for r in 0..n {
            let jh_row: [f64; 4] = {
                let mut row = [0.0; 4];
                for c in 0..n {
                    row[c] = if r < d { h[d + r][c] } else { -h[r - d][c] };
                }
                row
            };
            for c in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += jh_row[k] * self.v[n + k * n + c];
                }
                out.v[n + r * n + c] = s;
            }
        }
        out
    }

    fn axpy(&self, k: &State, h: f64) -> State {
        let mut out = *self;
        let len = self.n + self.n * self.n;
        for i in 0..len {
            out.v[i] += h * k.v[i];
        }
        out
    }

    fn finite(&self) -> bool {
        self.v[..self.n + self.n * self.n].iter().all(|v| v.is_finite())
    }
}

fn initial_state(dim: usize, z0: &PhasePoint) -> State {
    let n = 2 * dim;
    let mut v = [0.0; 20];
    v[..n].copy_from_slice(&z0.to_vec(dim));
    for i in 0..n {
        v[n + i * n + i] = 1.0;
    }
    State { n, v }
}

fn rk4_step(a: &dyn Hamiltonian, y: &State, t: f64, dt: f64) -> State {
    let k1 = y.derivative(a, t);
    let k2 = y.axpy(&k1, dt / 2.0).derivative(a, t + dt / 2.0);
    let k3 = y.axpy(&k2, dt / 2.0).derivative(a, t + dt / 2.0);
    let k4 = y.axpy(&k3, dt).derivative(a, t + dt);
    let mut out = *y;
    let len = y.n + y.n * y.n;
    for i in 0..len {
        out.v[i] += dt / 6.0 * (k1.v[i] + 2.0 * k2.v[i] + 2.0 * k3.v[i] + k4.v[i]);
    }
    out
}

fn det_full(m: &Array2<f64>) -> f64 {
    match m.nrows() {
        1 | 2 => det_small(m),
        _ => {
            use ndarray_linalg::Determinant;
            m.det().unwrap_or(f64::NAN)
        }
    }
}

fn state_result(a: &dyn Hamiltonian, y: &State, steps: usize) -> FlowResult {
    let n = y.n;
    let m = Array2::from_shape_fn((n, n), |(i, j)| y.v[n + i * n + j]);
    let det = det_full(&m);
    let j = standard_form(a.dim());
    let defect = max_abs(&(m.t().dot(&j).dot(&m) - &j));
    FlowResult {
        endpoint: PhasePoint::from_vec(&y.v[..n]),
        jacobian: m,
        diagnostics: FlowDiagnostics {
            steps,
            det_deviation: (det - 1.0).abs(),
            symplectic_defect: defect,
        },
    }
}

/// Integrate `ż = J∇a(t, z)`, `z(s) = z₀`, with the variational equation alongside.
pub fn hamiltonian_flow(
    a: &dyn Hamiltonian,
    s: f64,
    t: f64,
    z0: &PhasePoint,
    steps: usize,
) -> Result<FlowResult, FlowError> {
    if steps == 0 {
        return Err(FlowError::Steps);
    }
    let mut y = initial_state(a.dim(), z0);
    if t == s {
        return Ok(state_result(a, &y, 0));
    }
    let dt = (t - s) / steps as f64;
    for k in 0..steps {
        let tk = s + k as f64 * dt;
        y = rk4_step(a, &y, tk, dt);
        if !y.finite() {
            return Err(FlowError::NonFinite {
                time: tk + dt,
                step: k + 1,
                state: y.v[..y.n].to_vec(),
            });
        }
    }
    Ok(state_result(a, &y, steps))
}

/// Flow endpoints for many initial points, in input order.
pub fn flow_points(
    a: &dyn Hamiltonian,
    s: f64,
    t: f64,
    points: &[PhasePoint],
    steps: usize,
) -> Result<Vec<PhasePoint>, FlowError> {
    par::map_slice(points, |z| hamiltonian_flow(a, s, t, z, steps).map(|r| r.endpoint))
        .into_iter()
        .collect()
}

/// Central finite-difference Jacobian of the flow map at `z₀`.
pub fn finite_difference_jacobian(
    a: &dyn Hamiltonian,
    s: f64,
    t: f64,
    z0: &PhasePoint,
    steps: usize,
    eps: f64,
) -> Result<Array2<f64>, FlowError> {
    let n = 2 * a.dim();
    let base = z0.to_vec(a.dim());
    let mut jac = Array2::zeros((n, n));
    for c in 0..n {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[c] += eps;
        minus[c] -= eps;
        let fp = hamiltonian_flow(a, s, t, &PhasePoint::from_vec(&plus), steps)?
            .endpoint
            .to_vec(a.dim());
        let fm = hamiltonian_flow(a, s, t, &PhasePoint::from_vec(&minus), steps)?
            .endpoint
            .to_vec(a.dim());
        for r in 0..n {
            jac[[r, c]] = (fp[r] - fm[r]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

/// Sampled estimate of `inf |det ∂x/∂η|` over a finite set of initial points.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundEstimate {
    pub value: f64,
    pub argmin: PhasePoint,
    pub max: f64,
    pub samples: usize,
}

pub fn lower_bound_c(
    a: &dyn Hamiltonian,
    t: f64,
    s: f64,
    samples: &[PhasePoint],
    steps: usize,
) -> Result<LowerBoundEstimate, FlowError> {
    if samples.is_empty() {
        return Err(FlowError::EmptySamples);
    }
    let dets: Vec<f64> = par::map_slice(samples, |z| {
        hamiltonian_flow(a, s, t, z, steps).map(|r| det_small(&r.position_momentum_block()).abs())
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let (imin, &value) = dets
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    Ok(LowerBoundEstimate {
        value,
        argmin: samples[imin],
        max: dets.iter().cloned().fold(0.0, f64::max),
        samples: samples.len(),
    })
}

/// Square lattice of initial points in `[-r, r]^2` (d = 1).
pub fn square_samples(radius: f64, per_axis: usize) -> Vec<PhasePoint> {
    let step = if per_axis > 1 {
        2.0 * radius / (per_axis - 1) as f64
    } else {
        0.0
    };
    (0..per_axis)
        .flat_map(|i| {
            (0..per_axis).map(move |j| PhasePoint::line(-radius + i as f64 * step, -radius + j as f64 * step))
        })
        .collect()
}

/// Trajectory samples `(t, z(t), det B, det M)` for plotting.
pub fn flow_trace(a: &dyn Hamiltonian, s: f64, t: f64, z0: &PhasePoint, steps: usize) -> Result<CsvTable, FlowError> {
    if steps == 0 {
        return Err(FlowError::Steps);
    }
    let d = a.dim();
    let mut header = vec!["t".to_string()];
    for i in 0..d {
        header.push(format!("x{i}"));
    }
    for i in 0..d {
        header.push(format!("xi{i}"));
    }
    header.push("det_b".into());
    header.push("det_m".into());
    let mut table = CsvTable::new(header);
    let dt = (t - s) / steps as f64;
    let mut y = initial_state(d, z0);
    let mut push = |y: &State, time: f64| {
        let r = state_result(a, y, 0);
        let mut row = vec![time];
        row.extend_from_slice(&y.v[..2 * d]);
        row.push(det_small(&r.position_momentum_block()));
        row.push(det_full(&r.jacobian));
        table.push_numbers(&row);
    };
    push(&y, s);
    for k in 0..steps {
        y = rk4_step(a, &y, s + k as f64 * dt, dt);
        if !y.finite() {
            return Err(FlowError::NonFinite {
                time: s + (k + 1) as f64 * dt,
                step: k + 1,
                state: y.v[..y.n].to_vec(),
            });
        }
        push(&y, s + (k + 1) as f64 * dt);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ho_sin() -> TameHamiltonian {
        TameHamiltonian::new(
            1,
            Some(QuadraticHamiltonian::harmonic_oscillator(1)),
            vec![SmoothTerm::SinX {
                amplitude: 1.0,
                frequency: 1.0,
            }],
        )
        .unwrap()
    }

    fn free_sin() -> TameHamiltonian {
        TameHamiltonian::new(
            1,
            Some(QuadraticHamiltonian::free_particle(1)),
            vec![SmoothTerm::SinX {
                amplitude: 1.0,
                frequency: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn rejects_asymmetric_forms() {
        let q = Array2::from_shape_vec((2, 2), vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(QuadraticHamiltonian::new(q), Err(FlowError::NotSymmetric(_))));
        assert!(QuadraticHamiltonian::new(Array2::eye(3)).is_err());
    }

    #[test]
    fn free_particle_flow_is_shear() {
        let s = quadratic_flow(&QuadraticHamiltonian::free_particle(1), 2.0);
        let m = s.matrix();
        assert!((m[[0, 0]] - 1.0).abs() < 1e-14);
        assert!((m[[0, 1]] - 2.0).abs() < 1e-14);
        assert!(m[[1, 0]].abs() < 1e-14);
        assert!((m[[1, 1]] - 1.0).abs() < 1e-14);
        assert!((det_b(&s) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn oscillator_flow_is_rotation() {
        let h = QuadraticHamiltonian::harmonic_oscillator(1);
        for t in [0.3, 1.0, 2.5, -1.2] {
            let s = quadratic_flow(&h, t);
            let m = s.matrix();
            let expected = [[t.cos(), t.sin()], [-t.sin(), t.cos()]];
            for i in 0..2 {
                for j in 0..2 {
                    assert!((m[[i, j]] - expected[i][j]).abs() < 1e-13);
                }
            }
            assert!((det_b(&s) - t.sin()).abs() < 1e-13);
        }
        let s = quadratic_flow(&h, PI);
        assert!(det_b(&s).abs() < 1e-12);
        assert!(is_exceptional(&s));
    }

    #[test]
    fn zero_time_is_identity() {
        let s = quadratic_flow(&QuadraticHamiltonian::harmonic_oscillator(2), 0.0);
        assert_eq!(s.matrix(), &Array2::<f64>::eye(4));
        assert_eq!(det_b(&s), 0.0);
    }

    #[test]
    fn two_dimensional_blocks() {
        let s = quadratic_flow(&QuadraticHamiltonian::free_particle(2), 1.5);
        assert!((det_b(&s) - 2.25).abs() < 1e-13);
        assert!(s.symplectic_defect() < 1e-12);
        let inv = s.inverse();
        let id = s.compose(&inv);
        assert!(max_abs(&(id.matrix() - &Array2::<f64>::eye(4))) < 1e-13);
    }

    #[test]
    fn integrated_quadratic_flow_matches_exponential() {
        let h = QuadraticHamiltonian::harmonic_oscillator(1);
        let a = TameHamiltonian::quadratic(h.clone());
        let z0 = PhasePoint::line(1.3, -0.4);
        let r = hamiltonian_flow(&a, 0.0, 1.0, &z0, 200).unwrap();
        let exact = quadratic_flow(&h, 1.0).apply(&z0);
        assert!((r.endpoint - exact).norm() < 1e-8);
        assert!(r.diagnostics.det_deviation < 1e-6);
        assert!(r.diagnostics.symplectic_defect < 1e-6);
    }

    #[test]
    fn equal_times_give_identity() {
        let z0 = PhasePoint::line(0.2, 0.9);
        let r = hamiltonian_flow(&ho_sin(), 1.0, 1.0, &z0, 10).unwrap();
        assert_eq!(r.endpoint, z0);
        assert_eq!(r.jacobian, Array2::<f64>::eye(2));
        assert!(hamiltonian_flow(&ho_sin(), 0.0, 1.0, &z0, 0).is_err());
    }

    struct Blowup;
    impl Hamiltonian for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, _t: f64, z: &[f64]) -> f64 {
            z[1].powi(4)
        }
        fn gradient(&self, _t: f64, z: &[f64]) -> [f64; 4] {
            [0.0, f64::exp(z[1] * 1e3), 0.0, 0.0]
        }
        fn hessian(&self, _t: f64, _z: &[f64]) -> [[f64; 4]; 4] {
            [[0.0; 4]; 4]
        }
    }

    #[test]
    fn non_finite_evaluator_aborts() {
        let err = hamiltonian_flow(&Blowup, 0.0, 1.0, &PhasePoint::line(0.0, 1.0), 10).unwrap_err();
        assert!(matches!(err, FlowError::NonFinite { step: 1, .. }));
    }

    #[test]
    fn perturbed_flow_stays_near_linear_flow() {
        // |χ_t(z) − S_t z| ≤ C|t| e^{C|t|} with one C for all sampled z₀.
        let a = ho_sin();
        let h = QuadraticHamiltonian::harmonic_oscillator(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zs: Vec<PhasePoint> = (0..100)
            .map(|_| PhasePoint::line(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        let times = [0.25, 0.5, 1.0, 2.0];
        let mut gaps = Vec::new();
        for &t in &times {
            let s = quadratic_flow(&h, t);
            for z in &zs {
                let gap = (hamiltonian_flow(&a, 0.0, t, z, 200).unwrap().endpoint - s.apply(z)).norm();
                gaps.push((t, gap));
            }
        }
        // smallest C with gap ≤ C t e^{C t} for all samples, by bisection
        let holds = |c: f64| gaps.iter().all(|(t, g)| *g <= c * t * (c * t).exp());
        let (mut lo, mut hi) = (0.0, 10.0);
        assert!(holds(hi));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // the perturbation gradient is bounded by 1, so C ≤ 1 suffices
        assert!(hi <= 1.0 + 1e-9, "fitted C {hi}");
    }

    #[test]
    fn lower_bound_for_quadratic_is_constant() {
        let a = TameHamiltonian::quadratic(QuadraticHamiltonian::harmonic_oscillator(1));
        let est = lower_bound_c(&a, 1.0, 0.0, &square_samples(3.0, 7), 200).unwrap();
        assert!((est.value - 1f64.sin()).abs() < 1e-8);
        assert!(est.max - est.value <= 1e-8);
    }

    #[test]
    fn lower_bound_vanishes_at_equal_times() {
        let est = lower_bound_c(&ho_sin(), 0.5, 0.5, &square_samples(2.0, 3), 10).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn lower_bound_free_plus_sine() {
        let a = free_sin();
        let samples = square_samples(4.0, 9);
        let est = lower_bound_c(&a, 1.0, 0.0, &samples, 400).unwrap();
        assert!(est.value >= 0.5 && est.max <= 2.0, "{est:?}");
        for z in [samples[0], samples[40], samples[77]] {
            let r = hamiltonian_flow(&a, 0.0, 1.0, &z, 400).unwrap();
            let fd = finite_difference_jacobian(&a, 0.0, 1.0, &z, 400, 1e-4).unwrap();
            assert!((fd[[0, 1]] - r.jacobian[[0, 1]]).abs() < 1e-6);
        }
    }

    #[test]
    fn flows_compose() {
        let a = ho_sin();
        let z = PhasePoint::line(0.7, -1.1);
        let direct = hamiltonian_flow(&a, 0.0, 1.5, &z, 300).unwrap().endpoint;
        let mid = hamiltonian_flow(&a, 0.0, 0.6, &z, 120).unwrap().endpoint;
        let split = hamiltonian_flow(&a, 0.6, 1.5, &mid, 180).unwrap().endpoint;
        assert!((direct - split).norm() < 1e-6);
    }

    #[test]
    fn block_identity_for_inverse_flow() {
        // ∂y/∂ξ(x, ξ) = −(∂x/∂η)ᵀ(y, η) for the quadratic flow
        let h = QuadraticHamiltonian::new(Array2::from_shape_vec((2, 2), vec![0.5, 0.3, 0.3, 1.0]).unwrap()).unwrap();
        let a = TameHamiltonian::quadratic(h);
        let z = PhasePoint::line(0.4, 0.2);
        let fwd = hamiltonian_flow(&a, 0.0, 1.3, &z, 400).unwrap();
        let back = hamiltonian_flow(&a, 1.3, 0.0, &fwd.endpoint, 400).unwrap();
        let lhs = back.position_momentum_block();
        let rhs = fwd.position_momentum_block();
        assert!((lhs[[0, 0]] + rhs[[0, 0]]).abs() < 1e-6);
    }

    #[test]
    fn trace_has_expected_columns() {
        let t = flow_trace(&ho_sin(), 0.0, 1.0, &PhasePoint::line(1.0, 0.0), 10).unwrap();
        assert_eq!(t.header(), ["t", "x0", "xi0", "det_b", "det_m"]);
        assert_eq!(t.rows().len(), 11);
    }

    #[test]
    fn declared_bounds() {
        let a = ho_sin();
        assert_eq!(a.bounds().len(), 3);
        assert!((a.bounds()[0].bound - 2.0).abs() < 1e-15);
        assert!(TameHamiltonian::new(2, None, vec![SmoothTerm::SinXSinXi { amplitude: 1.0 }]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_quadratic_flows_are_symplectic(
            q in proptest::collection::vec(-2.0f64..2.0, 3),
            t in -3.0f64..3.0,
        ) {
            let m = Array2::from_shape_vec((2, 2), vec![q[0], q[1], q[1], q[2]]).unwrap();
            let s = quadratic_flow(&QuadraticHamiltonian::new(m).unwrap(), t);
            prop_assert!(s.symplectic_defect() <= 1e-9);
        }

        #[test]
        fn prop_integrated_flows_are_symplectic(x in -4.0f64..4.0, xi in -4.0f64..4.0, t in -1.5f64..1.5) {
            let r = hamiltonian_flow(&ho_sin(), 0.0, t, &PhasePoint::line(x, xi), 200).unwrap();
            prop_assert!(r.diagnostics.symplectic_defect <= 1e-6);
            prop_assert!(r.diagnostics.det_deviation <= 1e-6);
        }

        #[test]
        fn prop_variational_matches_finite_differences(x in -3.0f64..3.0, xi in -3.0f64..3.0) {
            let a = free_sin();
            let z = PhasePoint::line(x, xi);
            let r = hamiltonian_flow(&a, 0.0, 1.0, &z, 200).unwrap();
            let fd = finite_difference_jacobian(&a, 0.0, 1.0, &z, 200, 1e-4).unwrap();
            let scale = r.jacobian.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = (&fd - &r.jacobian).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= 1e-4 * scale);
        }
    }
}

//! Schrödinger propagators `U(t) = e^{-itH}`: the dense spectral oracle,
//! the free Fourier multiplier, metaplectic kernel quadrature, Strang
//! split-step evolution and the Dyson expansion for bounded perturbations.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis as NdAxis};
use num_complex::Complex64;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::par;
use crate::phase_space::{bin_frequency, fft_nd, Grid, PhaseSpaceError, SampledFunction};
use crate::symplectic_flow::{det_b, quadratic_flow, FlowError, QuadraticHamiltonian, SmoothTerm, TameHamiltonian};
use crate::weyl_quant::{
    ft_measure_potential, two_norm, weyl_quantize, AtomicMeasure, LinearOperator, PhaseSymbol, SymbolClass, WeylError,
    WeylOperator,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Kernel quadrature is refused when `|det B_t|` is at or below this value.
pub const KERNEL_DET_FLOOR: f64 = 1e-6;
/// Successive Dyson quadrature refinements differing by more than this warn.
pub const DYSON_REFINEMENT_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error("Hamiltonian has no parts")]
    EmptySpec,
    #[error("{0}")]
    Spec(String),
    #[error("operator is not Hermitian (defect {0:e})")]
    NotHermitian(f64),
    #[error("exceptional time t = {t}: |det B_t| = {det_b:e}")]
    Exceptional { t: f64, det_b: f64 },
    #[error("kinetic block of the quadratic form must be positive definite")]
    KineticBlock,
    #[error("realization requires dimension {required}, got {found}")]
    Dimension { required: usize, found: usize },
    #[error("step count must be at least {min}, got {found}")]
    Steps { min: usize, found: usize },
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("propagator lives on a different grid")]
    GridMismatch,
    #[error(transparent)]
    Weyl(#[from] WeylError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    PhaseSpace(#[from] PhaseSpaceError),
}

/// `a = a₂ + a₁ + a₀`: quadratic form, bounded smooth terms, and a potential
/// generated by a finite measure.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    dim: usize,
    quadratic: Option<QuadraticHamiltonian>,
    smooth: Vec<SmoothTerm>,
    potential: Option<AtomicMeasure>,
}

impl HamiltonianSpec {
    pub fn new(
        dim: usize,
        quadratic: Option<QuadraticHamiltonian>,
        smooth: Vec<SmoothTerm>,
        potential: Option<AtomicMeasure>,
    ) -> Result<Self, PropagatorError> {
        if quadratic.is_none() && smooth.is_empty() && potential.is_none() {
            return Err(PropagatorError::EmptySpec);
        }
        if let Some(q) = &quadratic {
            if q.dim() != dim {
                return Err(PropagatorError::Spec(format!(
                    "quadratic part has d = {}, spec has d = {dim}",
                    q.dim()
                )));
            }
        }
        if !smooth.is_empty() && dim != 1 {
            return Err(PropagatorError::Spec("smooth terms need d = 1".into()));
        }
        if let Some(mu) = &potential {
            if mu.dim() != dim {
                return Err(PropagatorError::Spec(format!(
                    "measure has d = {}, spec has d = {dim}",
                    mu.dim()
                )));
            }
        }
        Ok(Self {
            dim,
            quadratic,
            smooth,
            potential,
        })
    }

    pub fn quadratic_only(q: QuadraticHamiltonian) -> Self {
        Self {
            dim: q.dim(),
            quadratic: Some(q),
            smooth: Vec::new(),
            potential: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn quadratic(&self) -> Option<&QuadraticHamiltonian> {
        self.quadratic.as_ref()
    }

    pub fn smooth_terms(&self) -> &[SmoothTerm] {
        &self.smooth
    }

    pub fn potential(&self) -> Option<&AtomicMeasure> {
        self.potential.as_ref()
    }

    /// The same spec with the bounded potential removed.
    pub fn without_potential(&self) -> Self {
        Self {
            potential: None,
            ..self.clone()
        }
    }

    /// `a₂ + a₁` as an evaluable Hamiltonian for classical flows.
    pub fn principal_hamiltonian(&self) -> Result<TameHamiltonian, PropagatorError> {
        Ok(TameHamiltonian::new(
            self.dim,
            self.quadratic.clone(),
            self.smooth.clone(),
        )?)
    }

    /// Weyl symbol of `a₂ + a₁`, or `None` when both are absent.
    pub fn principal_symbol(&self) -> Option<PhaseSymbol> {
        let quad = self.quadratic.as_ref().map(PhaseSymbol::quadratic);
        let smooth = (!self.smooth.is_empty()).then(|| {
            PhaseSymbol::tame_terms(&TameHamiltonian::new(1, None, self.smooth.clone()).expect("checked in new"))
        });
        match (quad, smooth) {
            (Some(a), Some(b)) => Some(a.sum(&b)),
            (a, b) => a.or(b),
        }
    }

    pub fn perturbation_symbol(&self) -> Option<PhaseSymbol> {
        self.potential.as_ref().map(ft_measure_potential)
    }

    pub fn total_symbol(&self) -> PhaseSymbol {
        match (self.principal_symbol(), self.perturbation_symbol()) {
            (Some(a), Some(b)) => a.sum(&b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("validated non-empty"),
        }
    }

    /// Stable textual description used for cache keys and manifests.
    pub fn fingerprint(&self) -> String {
        let mut s = format!("d={}", self.dim);
        if let Some(q) = &self.quadratic {
            s.push_str(";Q=");
            for v in q.matrix().iter() {
                s.push_str(&format!("{v:e},"));
            }
        }
        for t in &self.smooth {
            s.push_str(&format!(";{t:?}"));
        }
        if let Some(mu) = &self.potential {
            for a in mu.atoms() {
                s.push_str(&format!(";atom{:?}@{:e},{:e}", a.position, a.weight.re, a.weight.im));
            }
        }
        s
    }
}

/// How a propagator is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Realization {
    DenseMatrix,
    SplitStep,
    KernelQuadrature,
    FourierMultiplier,
}

#[derive(Debug, Clone)]
enum Body {
    Dense(Array2<Complex64>),
    Multiplier(Vec<Complex64>),
    SplitStep {
        half_potential: Vec<Complex64>,
        kinetic: Vec<Complex64>,
        steps: usize,
    },
    Kernel {
        /// `N × (M·N)` quadrature matrix acting on oversampled input.
        matrix: Array2<Complex64>,
        oversample: usize,
    },
}

/// An evolution operator on one grid at one time.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: Grid,
    time: f64,
    label: String,
    body: Body,
}

impl Propagator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn realization(&self) -> Realization {
        match self.body {
            Body::Dense(_) => Realization::DenseMatrix,
            Body::Multiplier(_) => Realization::FourierMultiplier,
            Body::SplitStep { .. } => Realization::SplitStep,
            Body::Kernel { .. } => Realization::KernelQuadrature,
        }
    }

    pub fn from_matrix(
        grid: Grid,
        time: f64,
        matrix: Array2<Complex64>,
        label: impl Into<String>,
    ) -> Result<Self, PropagatorError> {
        if grid.dim() != 1 {
            return Err(PropagatorError::Dimension {
                required: 1,
                found: grid.dim(),
            });
        }
        let n = grid.points();
        if matrix.dim() != (n, n) {
            return Err(PhaseSpaceError::Length {
                expected: n * n,
                found: matrix.len(),
            }
            .into());
        }
        Ok(Self {
            grid,
            time,
            label: label.into(),
            body: Body::Dense(matrix),
        })
    }

    /// Dense matrix, when the realization stores one.
    pub fn matrix(&self) -> Option<&Array2<Complex64>> {
        match &self.body {
            Body::Dense(m) => Some(m),
            _ => None,
        }
    }

    /// Dense `N × N` matrix of any d = 1 realization (columns are images of unit vectors).
    pub fn to_dense(&self) -> Result<Array2<Complex64>, PropagatorError> {
        if let Body::Dense(m) = &self.body {
            return Ok(m.clone());
        }
        if self.grid.dim() != 1 {
            return Err(PropagatorError::Dimension {
                required: 1,
                found: self.grid.dim(),
            });
        }
        let n = self.grid.points();
        let cols = par::map_range(n, |k| {
            let mut e = vec![ZERO; n];
            e[k] = ONE;
            self.apply(&SampledFunction::from_raw(self.grid, e)).into_values()
        });
        let mut m = Array2::from_elem((n, n), ZERO);
        for (k, col) in cols.into_iter().enumerate() {
            for (j, v) in col.into_iter().enumerate() {
                m[[j, k]] = v;
            }
        }
        Ok(m)
    }

    /// `self ∘ other` as a dense propagator at the summed time.
    pub fn compose(&self, other: &Propagator) -> Result<Propagator, PropagatorError> {
        if !self.grid.same_as(&other.grid) {
            return Err(PropagatorError::GridMismatch);
        }
        let m = self.to_dense()?.dot(&other.to_dense()?);
        Propagator::from_matrix(
            self.grid,
            self.time + other.time,
            m,
            format!("{}∘{}", self.label, other.label),
        )
    }

    pub fn as_operator(&self) -> Result<WeylOperator, PropagatorError> {
        Ok(WeylOperator::from_matrix(
            self.grid,
            self.to_dense()?,
            self.label.clone(),
        )?)
    }

    /// `‖Uf‖/‖f‖ − 1`, largest in magnitude over the given functions.
    pub fn unitarity_defect<'a>(&self, fs: impl IntoIterator<Item = &'a SampledFunction>) -> f64 {
        fs.into_iter()
            .map(|f| {
                let n = f.norm();
                if n == 0.0 {
                    0.0
                } else {
                    (self.apply(f).norm() / n - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<(), PropagatorError> {
        let op = WeylOperator::from_matrix(self.grid, self.to_dense()?, self.label.clone())?;
        Ok(op.save(path)?)
    }

    pub fn load(path: &Path, time: f64, label: impl Into<String>) -> Result<Self, PropagatorError> {
        let op = WeylOperator::load(path, "cached")?;
        let grid = *op.grid();
        Propagator::from_matrix(grid, time, op.into_matrix(), label)
    }
}

fn multiply_in_fourier(values: &mut [Complex64], grid: &Grid, multiplier: &[Complex64]) {
    fft_nd(values, grid.points(), grid.dim(), false);
    for (v, m) in values.iter_mut().zip(multiplier) {
        *v *= m;
    }
    fft_nd(values, grid.points(), grid.dim(), true);
}

/// Multiplier samples on raw FFT bins, including the `1/N^d` normalization.
fn fourier_samples(grid: &Grid, symbol: impl Fn(&[f64]) -> Complex64) -> Vec<Complex64> {
    let n = grid.points();
    let h = grid.spacing();
    let inv = 1.0 / grid.len() as f64;
    let freqs: Vec<f64> = (0..n).map(|m| bin_frequency(m, n, h)).collect();
    (0..grid.len())
        .map(|idx| {
            let v = match grid.dim() {
                1 => symbol(&[freqs[idx]]),
                _ => symbol(&[freqs[idx / n], freqs[idx % n]]),
            };
            v * inv
        })
        .collect()
}

impl LinearOperator for Propagator {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn apply(&self, f: &SampledFunction) -> SampledFunction {
        debug_assert!(self.grid.same_as(f.grid()));
        match &self.body {
            Body::Dense(m) => {
                let v = Array1::from_vec(f.values().to_vec());
                SampledFunction::from_raw(self.grid, m.dot(&v).to_vec())
            }
            Body::Multiplier(mult) => {
                let mut v = f.values().to_vec();
                multiply_in_fourier(&mut v, &self.grid, mult);
                SampledFunction::from_raw(self.grid, v)
            }
            Body::SplitStep {
                half_potential,
                kinetic,
                steps,
            } => {
                let mut v = f.values().to_vec();
                for _ in 0..*steps {
                    for (a, p) in v.iter_mut().zip(half_potential) {
                        *a *= p;
                    }
                    multiply_in_fourier(&mut v, &self.grid, kinetic);
                    for (a, p) in v.iter_mut().zip(half_potential) {
                        *a *= p;
                    }
                }
                SampledFunction::from_raw(self.grid, v)
            }
            Body::Kernel { matrix, oversample } => {
                let fine = Array1::from_vec(oversample_band_limited(f.values(), *oversample));
                SampledFunction::from_raw(self.grid, matrix.dot(&fine).to_vec())
            }
        }
    }
}

/// Band-limited trigonometric interpolation of periodic samples onto a grid
/// `factor` times finer; the Nyquist bin is split evenly.
pub fn oversample_band_limited(values: &[Complex64], factor: usize) -> Vec<Complex64> {
    let n = values.len();
    if factor == 1 {
        return values.to_vec();
    }
    let big = factor * n;
    let mut spec = values.to_vec();
    fft_nd(&mut spec, n, 1, false);
    let mut padded = vec![ZERO; big];
    let half = n / 2;
    padded[..half].copy_from_slice(&spec[..half]);
    padded[big - half + 1..].copy_from_slice(&spec[half + 1..]);
    padded[half] = spec[half] * 0.5;
    padded[big - half] = spec[half] * 0.5;
    fft_nd(&mut padded, big, 1, true);
    let inv = 1.0 / n as f64;
    padded.iter().map(|v| v * inv).collect()
}

/// Eigen-decomposition `A = V diag(E) V*` of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    grid: Grid,
    energies: Vec<f64>,
    basis: Array2<Complex64>,
}

impl SpectralDecomposition {
    pub fn new(op: &WeylOperator) -> Result<Self, PropagatorError> {
        use ndarray_linalg::{Eigh, UPLO};
        let defect = op.hermitian_defect();
        if defect > crate::weyl_quant::HERMITIAN_TOL {
            return Err(PropagatorError::NotHermitian(defect));
        }
        let (e, v) = op
            .matrix()
            .eigh(UPLO::Lower)
            .map_err(|e| PropagatorError::Linalg(e.to_string()))?;
        Ok(Self {
            grid: *op.grid(),
            energies: e.to_vec(),
            basis: v,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn basis(&self) -> &Array2<Complex64> {
        &self.basis
    }

    /// `V diag(φ(E)) V*`.
    pub fn function_of(&self, phi: impl Fn(f64) -> Complex64) -> Array2<Complex64> {
        let mut scaled = self.basis.clone();
        for (mut col, &e) in scaled.axis_iter_mut(NdAxis(1)).zip(&self.energies) {
            col *= phi(e);
        }
        scaled.dot(&self.basis.t().mapv(|v| v.conj()))
    }

    /// `e^{-itA}` as a dense propagator.
    pub fn at(&self, t: f64) -> Propagator {
        let m = self.function_of(|e| Complex64::from_polar(1.0, -t * e));
        Propagator {
            grid: self.grid,
            time: t,
            label: format!("exp(-i {t} A)"),
            body: Body::Dense(m),
        }
    }

    /// Change of basis `V* M V`.
    pub fn to_eigenbasis(&self, m: &Array2<Complex64>) -> Array2<Complex64> {
        self.basis.t().mapv(|v| v.conj()).dot(m).dot(&self.basis)
    }

    /// Change of basis `V M V*`.
    pub fn from_eigenbasis(&self, m: &Array2<Complex64>) -> Array2<Complex64> {
        self.basis.dot(m).dot(&self.basis.t().mapv(|v| v.conj()))
    }
}

/// Dense `e^{-itA}` for a Hermitian quantized operator.
pub fn matrix_exp_propagator(a: &WeylOperator, t: f64) -> Result<Propagator, PropagatorError> {
    if t == 0.0 {
        return Propagator::from_matrix(*a.grid(), 0.0, Array2::eye(a.grid().points()), "identity");
    }
    Ok(SpectralDecomposition::new(a)?.at(t))
}

/// Dense reference propagator for the full symbol of `spec` (d = 1).
pub fn reference_propagator(spec: &HamiltonianSpec, grid: &Grid, t: f64) -> Result<Propagator, PropagatorError> {
    let op = weyl_quantize(&spec.total_symbol(), grid)?;
    matrix_exp_propagator(&op, t)
}

/// `e^{-it|ξ|²/2}` as a Fourier multiplier, solving `i∂u = −½Δu`.
pub fn free_propagator(t: f64, grid: &Grid) -> Propagator {
    let mult = fourier_samples(grid, |xi| {
        let r2: f64 = xi.iter().map(|v| v * v).sum();
        Complex64::from_polar(1.0, -t * r2 / 2.0)
    });
    Propagator {
        grid: *grid,
        time: t,
        label: format!("free({t})"),
        body: Body::Multiplier(mult),
    }
}

/// Number of sign changes of `det B_τ` for `τ` strictly between 0 and `t`.
fn det_b_crossings(q: &QuadraticHamiltonian, t: f64) -> usize {
    let samples = ((t.abs() * 2000.0).ceil() as usize).max(200);
    let mut crossings = 0;
    let mut prev = det_b(&quadratic_flow(q, t / samples as f64));
    for k in 2..samples {
        let cur = det_b(&quadratic_flow(q, t * k as f64 / samples as f64));
        if cur == 0.0 || cur.signum() != prev.signum() {
            crossings += 1;
        }
        if cur != 0.0 {
            prev = cur;
        }
    }
    crossings
}

/// Maslov count: crossings on `(0, t)` for `t > 0`, `−d − crossings` for `t < 0`.
pub fn maslov_index(q: &QuadraticHamiltonian, t: f64) -> i64 {
    let c = det_b_crossings(q, t) as i64;
    if t > 0.0 {
        c
    } else {
        -(q.dim() as i64) - c
    }
}

/// Metaplectic kernel quadrature for a pure quadratic Hamiltonian (d = 1).
///
/// `K(x, y) = (2πi)^{-1/2} |B|^{-1/2} e^{-iπm/2} e^{iΦ(x,y)}` with
/// `Φ = ½ D B⁻¹ x² − B⁻¹ x y + ½ B⁻¹ A y²`; the input is interpolated onto a
/// grid fine enough to resolve the phase.
pub fn quadratic_kernel_propagator(
    q: &QuadraticHamiltonian,
    t: f64,
    grid: &Grid,
) -> Result<Propagator, PropagatorError> {
    if grid.dim() != 1 || q.dim() != 1 {
        return Err(PropagatorError::Dimension {
            required: 1,
            found: grid.dim().max(q.dim()),
        });
    }
    if !q.has_positive_kinetic_block() {
        return Err(PropagatorError::KineticBlock);
    }
    let s = quadratic_flow(q, t);
    let b = det_b(&s);
    if b.abs() <= KERNEL_DET_FLOOR {
        return Err(PropagatorError::Exceptional { t, det_b: b });
    }
    let a = s.a()[[0, 0]];
    let d = s.d()[[0, 0]];
    let n = grid.points();
    let h = grid.spacing();
    let l = grid.half_extent();
    let oversample = (1.0 + (1.0 + a.abs()) * l * h / (PI * b.abs())).ceil() as usize;
    let fine_h = h / oversample as f64;
    let m = maslov_index(q, t);
    let pref = Complex64::from_polar(
        (2.0 * PI).powf(-0.5) * b.abs().powf(-0.5) * fine_h,
        -PI / 4.0 - PI * m as f64 / 2.0,
    );
    let rows = par::map_range(n, |j| {
        let x = grid.coordinate(j);
        (0..oversample * n)
            .map(|k| {
                let y = -l + k as f64 * fine_h;
                let phi = 0.5 * d / b * x * x - x * y / b + 0.5 * a / b * y * y;
                pref * Complex64::from_polar(1.0, phi)
            })
            .collect::<Vec<_>>()
    });
    let mut matrix = Array2::from_elem((n, oversample * n), ZERO);
    for (j, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            matrix[[j, k]] = v;
        }
    }
    Ok(Propagator {
        grid: *grid,
        time: t,
        label: format!("kernel({t})"),
        body: Body::Kernel { matrix, oversample },
    })
}

/// Strang splitting for `k(ξ) + V(x)` in d = 1 or 2.
pub fn split_step_propagator(
    kinetic: impl Fn(&[f64]) -> f64,
    potential: impl Fn(&[f64]) -> f64,
    t: f64,
    steps: usize,
    grid: &Grid,
) -> Result<Propagator, PropagatorError> {
    if steps == 0 {
        return Err(PropagatorError::Steps { min: 1, found: 0 });
    }
    let dt = t / steps as f64;
    let kin = fourier_samples(grid, |xi| Complex64::from_polar(1.0, -dt * kinetic(xi)));
    let d = grid.dim();
    let half_potential = (0..grid.len())
        .map(|i| {
            let p = grid.sample_point(i);
            Complex64::from_polar(1.0, -0.5 * dt * potential(&p[..d]))
        })
        .collect();
    Ok(Propagator {
        grid: *grid,
        time: t,
        label: format!("split({t}, {steps})"),
        body: Body::SplitStep {
            half_potential,
            kinetic: kin,
            steps,
        },
    })
}

/// Split-step realization of a spec with `a₂ = |ξ|²/2 (+ ½ω|x|²)`-type
/// separable quadratic part and a real measure potential.
pub fn split_step_for_spec(
    spec: &HamiltonianSpec,
    t: f64,
    steps: usize,
    grid: &Grid,
) -> Result<Propagator, PropagatorError> {
    if !spec.smooth_terms().is_empty() {
        return Err(PropagatorError::Spec("split-step needs a separable Hamiltonian".into()));
    }
    let d = spec.dim();
    let q = spec.quadratic().cloned();
    if let Some(q) = &q {
        let m = q.matrix();
        for i in 0..d {
            for j in 0..d {
                if m[[i, d + j]] != 0.0 {
                    return Err(PropagatorError::Spec("quadratic part mixes x and ξ".into()));
                }
            }
        }
    }
    let potential = spec.perturbation_symbol();
    if let Some(v) = &potential {
        if !v.is_real() {
            return Err(PropagatorError::Spec("potential must be real".into()));
        }
    }
    let qk = q.clone();
    let kinetic = move |xi: &[f64]| -> f64 {
        let Some(q) = &qk else { return 0.0 };
        let m = q.matrix();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += xi[i] * m[[d + i, d + j]] * xi[j];
            }
        }
        0.5 * s
    };
    let zeros = [0.0; 2];
    let pot = move |x: &[f64]| -> f64 {
        let mut s = 0.0;
        if let Some(q) = &q {
            let m = q.matrix();
            for i in 0..d {
                for j in 0..d {
                    s += 0.5 * x[i] * m[[i, j]] * x[j];
                }
            }
        }
        if let Some(v) = &potential {
            s += v.evaluate(x, &zeros[..d]).re;
        }
        s
    };
    split_step_propagator(kinetic, pot, t, steps, grid)
}

/// Operators `b_{t,k}`, their partial sum, and quadrature metadata.
#[derive(Debug, Clone)]
pub struct DysonState {
    pub time: f64,
    pub order: usize,
    pub quad_steps: usize,
    /// `b_{t,k}` for `k = 1..=order`, in the grid basis.
    pub terms: Vec<Array2<Complex64>>,
    /// `c_t = I + Σ_k (−i)^k b_{t,k}`, in the grid basis.
    pub partial_sum: Array2<Complex64>,
    /// `‖c_t(m) − c_t(m/2)‖₂→₂`, when a refinement check was run.
    pub refinement_gap: Option<f64>,
}

impl DysonState {
    pub fn term_norms(&self) -> Vec<f64> {
        self.terms.iter().map(two_norm).collect()
    }
}

/// Interaction-picture expansion around `U₁ = e^{-it(a₂+a₁)^w}` for the
/// bounded perturbation `a₀^w` (d = 1).
#[derive(Debug, Clone)]
pub struct DysonExpansion {
    grid: Grid,
    principal: SpectralDecomposition,
    /// `a₀^w` in the eigenbasis of `(a₂+a₁)^w`.
    perturbation_eigen: Array2<Complex64>,
    perturbation: Array2<Complex64>,
}

impl DysonExpansion {
    pub fn new(spec: &HamiltonianSpec, grid: &Grid) -> Result<Self, PropagatorError> {
        if spec.dim() != 1 || grid.dim() != 1 {
            return Err(PropagatorError::Dimension {
                required: 1,
                found: spec.dim().max(grid.dim()),
            });
        }
        let principal_symbol = spec
            .principal_symbol()
            .ok_or_else(|| PropagatorError::Spec("Dyson expansion needs a principal part".into()))?;
        let perturbation_symbol = spec
            .perturbation_symbol()
            .unwrap_or_else(|| PhaseSymbol::constant(1, ZERO));
        if perturbation_symbol.class() != SymbolClass::Sjostrand {
            return Err(PropagatorError::Spec("perturbation must be of Sjöstrand class".into()));
        }
        let h1 = weyl_quantize(&principal_symbol, grid)?;
        let a0 = weyl_quantize(&perturbation_symbol, grid)?.into_matrix();
        let principal = SpectralDecomposition::new(&h1)?;
        let perturbation_eigen = principal.to_eigenbasis(&a0);
        Ok(Self {
            grid: *grid,
            principal,
            perturbation_eigen,
            perturbation: a0,
        })
    }

    pub fn principal(&self) -> &SpectralDecomposition {
        &self.principal
    }

    /// `a₀^w` in the grid basis.
    pub fn perturbation(&self) -> &Array2<Complex64> {
        &self.perturbation
    }

    /// `σ_s` in the eigenbasis: `ã_{jk} e^{i(E_j − E_k)s}`.
    fn sigma_eigen(&self, s: f64) -> Array2<Complex64> {
        let e = &self.principal.energies;
        Array2::from_shape_fn(self.perturbation_eigen.dim(), |(j, k)| {
            self.perturbation_eigen[[j, k]] * Complex64::from_polar(1.0, (e[j] - e[k]) * s)
        })
    }

    /// `σ_t = U₁(t)* a₀^w U₁(t)` in the grid basis.
    pub fn sigma(&self, t: f64) -> WeylOperator {
        let m = self.principal.from_eigenbasis(&self.sigma_eigen(t));
        WeylOperator::from_matrix(self.grid, m, format!("sigma({t})")).expect("square d = 1 matrix")
    }

    pub fn principal_propagator(&self, t: f64) -> Propagator {
        self.principal.at(t)
    }

    /// `B_k(t) = ∫₀ᵗ σ_s B_{k−1}(s) ds`, `B₀ = I`, all orders stepped together
    /// on a uniform grid of `quad_steps` trapezoid panels.
    fn eigen_terms(&self, t: f64, order: usize, quad_steps: usize) -> Vec<Array2<Complex64>> {
        let n = self.grid.points();
        let ds = t / quad_steps as f64;
        let identity: Array2<Complex64> = Array2::eye(n);
        let mut integrals: Vec<Array2<Complex64>> = vec![Array2::from_elem((n, n), ZERO); order];
        // integrand values σ_s B_{k−1}(s) at the previous node
        let mut prev: Vec<Array2<Complex64>> = Vec::with_capacity(order);
        let sigma0 = self.sigma_eigen(0.0);
        for k in 0..order {
            prev.push(if k == 0 {
                sigma0.clone()
            } else {
                Array2::from_elem((n, n), ZERO)
            });
        }
        let half = Complex64::new(ds / 2.0, 0.0);
        for i in 1..=quad_steps {
            let s = i as f64 * ds;
            let sigma = self.sigma_eigen(s);
            for k in 0..order {
                let current = if k == 0 {
                    sigma.dot(&identity)
                } else {
                    sigma.dot(&integrals[k - 1])
                };
                let incr = (&prev[k] + &current) * half;
                integrals[k] += &incr;
                prev[k] = current;
            }
        }
        integrals
    }

    /// `b_{t,k}` for `k = 1..=order` with their partial sum.
    pub fn terms(&self, t: f64, order: usize, quad_steps: usize) -> Result<DysonState, PropagatorError> {
        if order > 0 && quad_steps < 4 * order {
            return Err(PropagatorError::Steps {
                min: 4 * order,
                found: quad_steps,
            });
        }
        let eigen = if order == 0 {
            Vec::new()
        } else {
            self.eigen_terms(t, order, quad_steps)
        };
        let n = self.grid.points();
        let mut c_eigen: Array2<Complex64> = Array2::eye(n);
        let mut factor = ONE;
        for b in &eigen {
            factor *= Complex64::new(0.0, -1.0);
            c_eigen = c_eigen + b * factor;
        }
        Ok(DysonState {
            time: t,
            order,
            quad_steps,
            terms: eigen.iter().map(|b| self.principal.from_eigenbasis(b)).collect(),
            partial_sum: self.principal.from_eigenbasis(&c_eigen),
            refinement_gap: None,
        })
    }

    /// `U₁(t)(I + Σ_{k≤K} (−i)^k b_{t,k})`, checked against a half-resolution run.
    pub fn propagator(
        &self,
        t: f64,
        order: usize,
        quad_steps: usize,
    ) -> Result<(Propagator, DysonState), PropagatorError> {
        let mut state = self.terms(t, order, quad_steps)?;
        if order > 0 && quad_steps / 2 >= 4 * order {
            let coarse = self.terms(t, order, quad_steps / 2)?;
            let gap = two_norm(&(&state.partial_sum - &coarse.partial_sum));
            if gap > DYSON_REFINEMENT_TOL {
                log::warn!("Dyson quadrature under-resolved at t = {t}: refinement changes the partial sum by {gap:e}");
            }
            state.refinement_gap = Some(gap);
        }
        let u1 = self.principal.at(t);
        let m = u1.matrix().expect("dense").dot(&state.partial_sum);
        let p = Propagator::from_matrix(self.grid, t, m, format!("dyson({t}, K={order})"))?;
        Ok((p, state))
    }
}

pub fn dyson_sigma(spec: &HamiltonianSpec, grid: &Grid, t: f64) -> Result<WeylOperator, PropagatorError> {
    Ok(DysonExpansion::new(spec, grid)?.sigma(t))
}

pub fn dyson_term(
    spec: &HamiltonianSpec,
    grid: &Grid,
    t: f64,
    k: usize,
    quad_steps: usize,
) -> Result<Array2<Complex64>, PropagatorError> {
    if k == 0 {
        return Ok(Array2::eye(grid.points()));
    }
    let mut state = DysonExpansion::new(spec, grid)?.terms(t, k, quad_steps)?;
    Ok(state.terms.pop().expect("k ≥ 1 terms"))
}

pub fn dyson_propagator(
    spec: &HamiltonianSpec,
    grid: &Grid,
    t: f64,
    order: usize,
    quad_steps: usize,
) -> Result<Propagator, PropagatorError> {
    Ok(DysonExpansion::new(spec, grid)?.propagator(t, order, quad_steps)?.0)
}

/// On-disk cache of dense propagators keyed by `(spec, t, N, L)`.
#[derive(Debug, Clone)]
pub struct PropagatorCache {
    dir: PathBuf,
}

impl PropagatorCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn key(fingerprint: &str, t: f64, grid: &Grid) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!(
            "{fingerprint}|t={t:e}|N={}|L={:e}|d={}",
            grid.points(),
            grid.half_extent(),
            grid.dim()
        ));
        let digest = hasher.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    /// Load a cached propagator or build, store and return it.
    pub fn get_or_build(
        &self,
        fingerprint: &str,
        t: f64,
        grid: &Grid,
        build: impl FnOnce() -> Result<Propagator, PropagatorError>,
    ) -> Result<(Propagator, bool), PropagatorError> {
        let key = Self::key(fingerprint, t, grid);
        let path = self.path_for(&key);
        if path.exists() {
            match Propagator::load(&path, t, format!("cached({key})")) {
                Ok(p) if p.grid().same_as(grid) => return Ok((p, true)),
                Ok(_) => log::warn!("cache entry {key} has a different grid; rebuilding"),
                Err(e) => log::warn!("unreadable cache entry {key}: {e}; rebuilding"),
            }
        }
        let p = build()?;
        p.save(&path)?;
        Ok((p, false))
    }
}

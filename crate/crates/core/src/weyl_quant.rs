//! Weyl quantization of phase-space symbols into dense matrices (d = 1),
//! symbols generated by finite measures, the Sjöstrand-class norm estimate,
//! and the Gabor-side operator norm `∫ sup_w |⟨A π(z+w)g, π(w)g⟩| dz`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::phase_space::io::{read_binary, write_binary, BinaryHeader};
use crate::phase_space::{
    fft_nd, phase_shift, Grid, PhaseLattice, PhasePoint, PhaseSpaceError, SampledFunction, Window,
};
use crate::symplectic_flow::{QuadraticHamiltonian, TameHamiltonian};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum WeylError {
    #[error("dense quantization is only available in dimension 1 (got d = {0}); use the split-step path")]
    Dimension(usize),
    #[error("symbol evaluated to a non-finite value at x = {x}, ξ = {xi}")]
    NonFinite { x: f64, xi: f64 },
    #[error("operator lives on a different grid")]
    GridMismatch,
    #[error("lattices must share steps (z: {z:?}, w: {w:?})")]
    LatticeSteps { z: (f64, f64), w: (f64, f64) },
    #[error("invalid symbol lattice: {0}")]
    InvalidLattice(String),
    #[error(transparent)]
    PhaseSpace(#[from] PhaseSpaceError),
}

/// Which symbol class a [`PhaseSymbol`] is declared to belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolClass {
    Quadratic,
    SmoothTame,
    Sjostrand,
    Product,
}

type Evaluator = Arc<dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync>;

/// A function `a(x, ξ)` on `R^{2d}` with its class tag.
#[derive(Clone)]
pub struct PhaseSymbol {
    dim: usize,
    class: SymbolClass,
    real: bool,
    label: String,
    eval: Evaluator,
}

impl fmt::Debug for PhaseSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhaseSymbol")
            .field("dim", &self.dim)
            .field("class", &self.class)
            .field("real", &self.real)
            .field("label", &self.label)
            .finish()
    }
}

impl PhaseSymbol {
    pub fn new(
        dim: usize,
        class: SymbolClass,
        real: bool,
        label: impl Into<String>,
        eval: impl Fn(&[f64], &[f64]) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            class,
            real,
            label: label.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn constant(dim: usize, c: Complex64) -> Self {
        Self::new(
            dim,
            SymbolClass::Sjostrand,
            c.im == 0.0,
            format!("const({c})"),
            move |_, _| c,
        )
    }

    /// `a(x, ξ) = x₁`.
    pub fn position(dim: usize) -> Self {
        Self::new(dim, SymbolClass::Quadratic, true, "x", |x, _| Complex64::new(x[0], 0.0))
    }

    /// `a(x, ξ) = ξ₁`.
    pub fn frequency(dim: usize) -> Self {
        Self::new(dim, SymbolClass::Quadratic, true, "xi", |_, xi| {
            Complex64::new(xi[0], 0.0)
        })
    }

    pub fn quadratic(h: &QuadraticHamiltonian) -> Self {
        let h = h.clone();
        let d = h.dim();
        Self::new(d, SymbolClass::Quadratic, true, "quadratic", move |x, xi| {
            let mut z = [0.0; 4];
            z[..d].copy_from_slice(&x[..d]);
            z[d..2 * d].copy_from_slice(&xi[..d]);
            Complex64::new(h.value(&z[..2 * d]), 0.0)
        })
    }

    /// Non-quadratic part of a tame Hamiltonian (d = 1).
    pub fn tame_terms(h: &TameHamiltonian) -> Self {
        let terms = h.terms().to_vec();
        Self::new(1, SymbolClass::SmoothTame, true, "tame", move |x, xi| {
            Complex64::new(terms.iter().map(|t| t.value(x[0], xi[0])).sum(), 0.0)
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class(&self) -> SymbolClass {
        self.class
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn evaluate(&self, x: &[f64], xi: &[f64]) -> Complex64 {
        (self.eval)(x, xi)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let inner = self.eval.clone();
        Self {
            dim: self.dim,
            class: self.class,
            real: self.real && c.im == 0.0,
            label: format!("{c}*{}", self.label),
            eval: Arc::new(move |x, xi| c * inner(x, xi)),
        }
    }

    pub fn sum(&self, other: &PhaseSymbol) -> Self {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        let class = if self.class == other.class {
            self.class
        } else {
            SymbolClass::Product
        };
        Self {
            dim: self.dim,
            class,
            real: self.real && other.real,
            label: format!("{}+{}", self.label, other.label),
            eval: Arc::new(move |x, xi| a(x, xi) + b(x, xi)),
        }
    }

    pub fn product(&self, other: &PhaseSymbol) -> Self {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        Self {
            dim: self.dim,
            class: SymbolClass::Product,
            real: self.real && other.real,
            label: format!("({})*({})", self.label, other.label),
            eval: Arc::new(move |x, xi| a(x, xi) * b(x, xi)),
        }
    }

    /// Samples on the spatial grid times the doubled-resolution dual grid.
    pub fn sample(&self, grid: &Grid) -> Result<Array2<Complex64>, WeylError> {
        if grid.dim() != 1 || self.dim != 1 {
            return Err(WeylError::Dimension(grid.dim().max(self.dim)));
        }
        let n = grid.points();
        let xis = doubled_frequencies(grid);
        let mut out = Array2::zeros((n, 2 * n));
        for k in 0..n {
            let x = grid.coordinate(k);
            for (m, &xi) in xis.iter().enumerate() {
                let v = self.evaluate(&[x], &[xi]);
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(WeylError::NonFinite { x, xi });
                }
                out[[k, m]] = v;
            }
        }
        Ok(out)
    }
}

/// `ξ_m = −π/h + m·π/(N h)`, `m = 0..2N`.
fn doubled_frequencies(grid: &Grid) -> Vec<f64> {
    let n = grid.points();
    let step = PI / (n as f64 * grid.spacing());
    (0..2 * n).map(|m| -grid.max_frequency() + m as f64 * step).collect()
}

/// Something that maps sampled functions to sampled functions on one grid.
pub trait LinearOperator: Sync {
    fn grid(&self) -> &Grid;
    fn apply(&self, f: &SampledFunction) -> SampledFunction;
}

/// Dense `N × N` operator on a one-dimensional grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeylOperator {
    grid: Grid,
    matrix: Array2<Complex64>,
    label: String,
    hermitian: bool,
}

/// Max-entry tolerance for the Hermitian flag.
pub const HERMITIAN_TOL: f64 = 1e-8;

impl WeylOperator {
    pub fn from_matrix(grid: Grid, matrix: Array2<Complex64>, label: impl Into<String>) -> Result<Self, WeylError> {
        if grid.dim() != 1 {
            return Err(WeylError::Dimension(grid.dim()));
        }
        let n = grid.points();
        if matrix.dim() != (n, n) {
            return Err(PhaseSpaceError::Length {
                expected: n * n,
                found: matrix.len(),
            }
            .into());
        }
        let hermitian = hermitian_defect(&matrix) <= HERMITIAN_TOL;
        Ok(Self {
            grid,
            matrix,
            label: label.into(),
            hermitian,
        })
    }

    pub fn identity(grid: Grid) -> Result<Self, WeylError> {
        Self::from_matrix(grid, Array2::eye(grid.points()), "identity")
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<Complex64> {
        self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.matrix)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &WeylOperator) -> Result<Self, WeylError> {
        if !self.grid.same_as(&other.grid) {
            return Err(WeylError::GridMismatch);
        }
        Self::from_matrix(
            self.grid,
            self.matrix.dot(&other.matrix),
            format!("({})∘({})", self.label, other.label),
        )
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            grid: self.grid,
            matrix: &self.matrix * c,
            label: format!("{c}*{}", self.label),
            hermitian: self.hermitian && c.im == 0.0,
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            grid: self.grid,
            matrix: self.matrix.t().mapv(|v| v.conj()),
            label: format!("({})*", self.label),
            hermitian: self.hermitian,
        }
    }

    /// Largest singular value.
    pub fn two_norm(&self) -> f64 {
        two_norm(&self.matrix)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeylError> {
        let n = self.grid.points();
        let header = BinaryHeader {
            kind: "matrix".into(),
            dim: 1,
            points: n,
            half_extent: self.grid.half_extent(),
            step_x: self.grid.spacing(),
            step_xi: self.grid.dual_spacing(),
            shape: vec![n, n],
            origin: [-self.grid.half_extent(), -self.grid.max_frequency()],
        };
        let values: Vec<Complex64> = self.matrix.iter().copied().collect();
        write_binary(path, &header, &values)?;
        Ok(())
    }

    pub fn load(path: &Path, label: impl Into<String>) -> Result<Self, WeylError> {
        let (h, values) = read_binary(path)?;
        if h.kind != "matrix" || h.shape.len() != 2 || h.shape[0] != h.shape[1] {
            return Err(PhaseSpaceError::Format(format!("not a square matrix: kind {}", h.kind)).into());
        }
        let grid = Grid::new(h.dim, h.half_extent, h.points)?;
        let m = Array2::from_shape_vec((h.shape[0], h.shape[1]), values)
            .map_err(|e| PhaseSpaceError::Format(e.to_string()))?;
        Self::from_matrix(grid, m, label)
    }
}

impl LinearOperator for WeylOperator {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn apply(&self, f: &SampledFunction) -> SampledFunction {
        debug_assert!(self.grid.same_as(f.grid()));
        let v = Array1::from_vec(f.values().to_vec());
        SampledFunction::from_raw(self.grid, self.matrix.dot(&v).to_vec())
    }
}

pub fn hermitian_defect(m: &Array2<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Spectral norm of a dense complex matrix.
pub fn two_norm(m: &Array2<Complex64>) -> f64 {
    use ndarray_linalg::SVD;
    match m.svd(false, false) {
        Ok((_, s, _)) => s.iter().cloned().fold(0.0, f64::max),
        Err(e) => {
            log::warn!("singular value decomposition failed: {e}");
            f64::NAN
        }
    }
}

/// Dense matrix of `a^w` on a d = 1 grid.
///
/// `K[j,k] = (h δξ'/2π) Σ_m e^{i(x_j−x_k)ξ_m} a((x_j+x_k)/2, ξ_m)` over the
/// doubled dual grid, one length-`2N` transform per antidiagonal `j + k`.
pub fn weyl_quantize(a: &PhaseSymbol, grid: &Grid) -> Result<WeylOperator, WeylError> {
    if grid.dim() != 1 || a.dim() != 1 {
        return Err(WeylError::Dimension(grid.dim().max(a.dim())));
    }
    let n = grid.points();
    let h = grid.spacing();
    let xis = doubled_frequencies(grid);
    let scale = h * (PI / (n as f64 * h)) / (2.0 * PI);
    let diagonals: Vec<Result<Vec<Complex64>, WeylError>> = par::map_range(2 * n - 1, |s| {
        let mid = -grid.half_extent() + s as f64 * h / 2.0;
        let mut c: Vec<Complex64> = Vec::with_capacity(2 * n);
        for &xi in &xis {
            let v = a.evaluate(&[mid], &[xi]);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(WeylError::NonFinite { x: mid, xi });
            }
            c.push(v);
        }
        // c[d] = Σ_m a_m e^{2πi d m/(2N)}
        fft_nd(&mut c, 2 * n, 1, true);
        Ok(c)
    });
    let mut matrix = Array2::from_elem((n, n), ZERO);
    for (s, diag) in diagonals.into_iter().enumerate() {
        let c = diag?;
        let j_lo = s.saturating_sub(n - 1);
        let j_hi = s.min(n - 1);
        for j in j_lo..=j_hi {
            let k = s - j;
            let d = j as i64 - k as i64;
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            matrix[[j, k]] = c[d.rem_euclid(2 * n as i64) as usize] * (scale * sign);
        }
    }
    let mut op = WeylOperator::from_matrix(*grid, matrix, a.label())?;
    if a.is_real() && !op.hermitian {
        log::warn!(
            "real symbol {} quantized with Hermitian defect {:e}",
            a.label(),
            op.hermitian_defect()
        );
    }
    op.hermitian = op.hermitian || (a.is_real() && op.hermitian_defect() <= HERMITIAN_TOL);
    Ok(op)
}

/// `μ = Σ_j c_j δ_{θ_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: Vec<f64>,
    pub weight: Complex64,
}

impl AtomicMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self, WeylError> {
        for a in &atoms {
            if a.position.len() != dim {
                return Err(WeylError::Dimension(a.position.len()));
            }
            if !(a.position.iter().all(|v| v.is_finite()) && a.weight.re.is_finite() && a.weight.im.is_finite()) {
                return Err(WeylError::NonFinite {
                    x: a.position[0],
                    xi: f64::NAN,
                });
            }
        }
        Ok(Self { dim, atoms })
    }

    /// `Σ_j c_j δ_{θ_j}` in d = 1 from `(θ, c)` pairs.
    pub fn line(atoms: &[(f64, Complex64)]) -> Self {
        Self {
            dim: 1,
            atoms: atoms
                .iter()
                .map(|&(p, w)| Atom {
                    position: vec![p],
                    weight: w,
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `Σ |c_j|`.
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.norm()).sum()
    }

    /// `c_{−θ} = conj(c_θ)` for every atom.
    pub fn is_hermitian_symmetric(&self) -> bool {
        self.atoms.iter().all(|a| {
            let neg: Vec<f64> = a.position.iter().map(|v| -v).collect();
            let total: Complex64 = self
                .atoms
                .iter()
                .filter(|b| b.position.iter().zip(&neg).all(|(p, q)| (p - q).abs() < 1e-12))
                .map(|b| b.weight)
                .sum();
            let own: Complex64 = self
                .atoms
                .iter()
                .filter(|b| b.position.iter().zip(&a.position).all(|(p, q)| (p - q).abs() < 1e-12))
                .map(|b| b.weight)
                .sum();
            (total - own.conj()).norm() < 1e-12
        })
    }
}

/// `a₀(x, ξ) = V(x) = Σ c_j e^{i x·θ_j}`.
pub fn ft_measure_potential(mu: &AtomicMeasure) -> PhaseSymbol {
    let atoms = mu.atoms.clone();
    let real = mu.is_hermitian_symmetric();
    let d = mu.dim;
    let label = format!("potential[{} atoms]", atoms.len());
    PhaseSymbol::new(d, SymbolClass::Sjostrand, real, label, move |x, _| {
        let mut s = ZERO;
        for a in &atoms {
            let phase: f64 = x[..d].iter().zip(&a.position).map(|(u, v)| u * v).sum();
            s += a.weight * Complex64::from_polar(1.0, phase);
        }
        if real {
            Complex64::new(s.re, 0.0)
        } else {
            s
        }
    })
}

/// Discretization of the phase-space STFT used for the Sjöstrand norm (d = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolLattice {
    /// Window centres `Z` cover `[-z_radius, z_radius]²` with step `z_step`.
    pub z_radius: f64,
    pub z_step: f64,
    /// Frequencies `ζ` are kept in `[-zeta_radius, zeta_radius]²`.
    pub zeta_radius: f64,
    /// Quadrature step for the local transform.
    pub sample_step: f64,
    /// Local transform size per axis; the `ζ` step is `2π/(size·sample_step)`.
    pub sample_points: usize,
}

impl Default for SymbolLattice {
    fn default() -> Self {
        Self {
            z_radius: 2.0 * PI,
            z_step: 0.5,
            zeta_radius: 6.0,
            sample_step: 0.25,
            sample_points: 96,
        }
    }
}

impl SymbolLattice {
    pub fn zeta_step(&self) -> f64 {
        2.0 * PI / (self.sample_points as f64 * self.sample_step)
    }

    /// Halve both steps, keeping the ζ step fixed.
    pub fn refined(&self) -> Self {
        Self {
            z_step: self.z_step / 2.0,
            sample_step: self.sample_step / 2.0,
            sample_points: self.sample_points * 2,
            ..*self
        }
    }

    fn validate(&self) -> Result<(), WeylError> {
        let ok = self.z_radius >= 0.0
            && self.z_step > 0.0
            && self.zeta_radius > 0.0
            && self.sample_step > 0.0
            && self.sample_points >= 8
            && self.sample_points.is_multiple_of(2);
        if !ok {
            return Err(WeylError::InvalidLattice(format!("{self:?}")));
        }
        if self.zeta_radius >= PI / self.sample_step {
            return Err(WeylError::InvalidLattice(format!(
                "ζ radius {} exceeds the local Nyquist limit {}",
                self.zeta_radius,
                PI / self.sample_step
            )));
        }
        Ok(())
    }
}

/// `∫ sup_Z |V_Φ a(Z, ζ)| dζ` with a unit Gaussian `Φ` on `R²` (d = 1).
pub fn sjostrand_norm_estimate(a: &PhaseSymbol, lat: &SymbolLattice) -> Result<f64, WeylError> {
    if a.dim() != 1 {
        return Err(WeylError::Dimension(a.dim()));
    }
    lat.validate()?;
    let m = lat.sample_points;
    let eta = lat.sample_step;
    let half = m / 2;
    let nz = (lat.z_radius / lat.z_step + 1e-9).floor() as i64;
    let centres: Vec<(f64, f64)> = (-nz..=nz)
        .flat_map(|i| (-nz..=nz).map(move |j| (i as f64 * lat.z_step, j as f64 * lat.z_step)))
        .collect();
    let dzeta = lat.zeta_step();
    let kept: Vec<usize> = (0..m)
        .filter(|&b| {
            let k = if b < half { b as f64 } else { b as f64 - m as f64 };
            (k * dzeta).abs() <= lat.zeta_radius
        })
        .collect();
    let norm = 1.0 / PI.sqrt();
    let slices: Vec<Result<Vec<f64>, WeylError>> = par::map_slice(&centres, |&(zx, zxi)| {
        let mut buf = vec![ZERO; m * m];
        for p in 0..m {
            let oy = (p as f64 - half as f64) * eta;
            for q in 0..m {
                let oe = (q as f64 - half as f64) * eta;
                let w = norm * (-(oy * oy + oe * oe) / 2.0).exp();
                if w < 1e-18 {
                    continue;
                }
                let (x, xi) = (zx + oy, zxi + oe);
                let v = a.evaluate(&[x], &[xi]);
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(WeylError::NonFinite { x, xi });
                }
                buf[p * m + q] = v * w;
            }
        }
        fft_nd(&mut buf, m, 2, false);
        // |V(Z, ζ)| is independent of the phase factor from the offset origin.
        let mut mags = Vec::with_capacity(kept.len() * kept.len());
        for &bp in &kept {
            for &bq in &kept {
                mags.push(buf[bp * m + bq].norm() * eta * eta);
            }
        }
        Ok(mags)
    });
    let mut sup = vec![0.0f64; kept.len() * kept.len()];
    for s in slices {
        for (acc, v) in sup.iter_mut().zip(s?) {
            *acc = acc.max(v);
        }
    }
    Ok(sup.iter().sum::<f64>() * dzeta * dzeta / (2.0 * PI))
}

fn lattice_key(z: &PhasePoint, step_x: f64, step_xi: f64) -> [i64; 4] {
    [
        (z.x[0] / step_x).round() as i64,
        (z.x[1] / step_x).round() as i64,
        (z.xi[0] / step_xi).round() as i64,
        (z.xi[1] / step_xi).round() as i64,
    ]
}

/// `sup_w |⟨A π(z+w)g, π(w)g⟩|` for every `z` of the lattice, in lattice order.
pub fn gabor_envelope_samples(
    op: &dyn LinearOperator,
    window: &Window,
    z_lat: &PhaseLattice,
    w_lat: &PhaseLattice,
) -> Result<Vec<f64>, WeylError> {
    if !op.grid().same_as(window.grid()) {
        return Err(WeylError::GridMismatch);
    }
    let (sx, sxi) = (z_lat.step_x(), z_lat.step_xi());
    if (w_lat.step_x() - sx).abs() > 1e-12 || (w_lat.step_xi() - sxi).abs() > 1e-12 {
        return Err(WeylError::LatticeSteps {
            z: (sx, sxi),
            w: (w_lat.step_x(), w_lat.step_xi()),
        });
    }
    let zs = z_lat.points();
    let ws = w_lat.points();
    let mut shifts: BTreeMap<[i64; 4], PhasePoint> = BTreeMap::new();
    for z in &zs {
        for w in &ws {
            let u = *z + *w;
            shifts.entry(lattice_key(&u, sx, sxi)).or_insert(u);
        }
    }
    let keys: Vec<[i64; 4]> = shifts.keys().copied().collect();
    let images = par::map_slice(&keys, |k| op.apply(&phase_shift(window.base(), &shifts[k])));
    let index: BTreeMap<[i64; 4], usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let probes = par::map_slice(&ws, |w| phase_shift(window.base(), w));
    Ok(par::map_slice(&zs, |z| {
        ws.iter()
            .zip(&probes)
            .map(|(w, pw)| {
                let u = *z + *w;
                images[index[&lattice_key(&u, sx, sxi)]].inner(pw).norm()
            })
            .fold(0.0, f64::max)
    }))
}

/// `Σ_z sup_w |⟨A π(z+w)g, π(w)g⟩| · cell(z)`.
pub fn gabor_operator_norm(
    op: &dyn LinearOperator,
    window: &Window,
    z_lat: &PhaseLattice,
    w_lat: &PhaseLattice,
) -> Result<f64, WeylError> {
    let samples = gabor_envelope_samples(op, window, z_lat, w_lat)?;
    Ok(samples.iter().sum::<f64>() * z_lat.cell_weight())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{fourier_transform, inverse_fourier_transform};
    use crate::symplectic_flow::SmoothTerm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::line(8.0, 64).unwrap()
    }

    fn max_entry(m: &Array2<Complex64>) -> f64 {
        m.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn random_measure(rng: &mut ChaCha8Rng, atoms: usize) -> AtomicMeasure {
        let mut list = Vec::new();
        for _ in 0..atoms {
            let theta: f64 = rng.random_range(0.2..2.0);
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.5;
            list.push((theta, c));
            list.push((-theta, c.conj()));
        }
        AtomicMeasure::line(&list)
    }

    #[test]
    fn constant_one_is_identity() {
        let g = grid();
        let op = weyl_quantize(&PhaseSymbol::constant(1, Complex64::new(1.0, 0.0)), &g).unwrap();
        let diff = op.matrix() - &Array2::<Complex64>::eye(g.points());
        assert!(max_entry(&diff) < 1e-10);
        assert!(op.is_hermitian());
    }

    #[test]
    fn position_is_diagonal() {
        let g = grid();
        let op = weyl_quantize(&PhaseSymbol::position(1), &g).unwrap();
        let expected = Array2::from_diag(&Array1::from_iter(
            g.coordinates().into_iter().map(|x| Complex64::new(x, 0.0)),
        ));
        assert!(max_entry(&(op.matrix() - &expected)) < 1e-10);
    }

    #[test]
    fn frequency_is_derivative() {
        let g = Grid::line(10.0, 128).unwrap();
        let kappa = 1.5;
        let f = SampledFunction::from_fn(g, |x| Complex64::from_polar((-x[0] * x[0]).exp(), kappa * x[0]));
        let op = weyl_quantize(&PhaseSymbol::frequency(1), &g).unwrap();
        // −i f' via the spectral derivative
        let spec = fourier_transform(&f);
        let dual = *spec.grid();
        let scaled = SampledFunction::from_raw(
            dual,
            spec.values()
                .iter()
                .enumerate()
                .map(|(m, v)| v * dual.coordinate(m))
                .collect(),
        );
        let oracle = inverse_fourier_transform(&scaled);
        assert!(op.apply(&f).relative_error(&oracle) < 1e-6);
    }

    #[test]
    fn rejects_planar_grids() {
        let g = Grid::new(2, 4.0, 16).unwrap();
        assert!(matches!(
            weyl_quantize(&PhaseSymbol::position(2), &g),
            Err(WeylError::Dimension(2))
        ));
    }

    #[test]
    fn non_finite_symbol_is_reported() {
        let a = PhaseSymbol::new(1, SymbolClass::SmoothTame, true, "bad", |x, _| {
            Complex64::new(1.0 / x[0], 0.0)
        });
        assert!(matches!(weyl_quantize(&a, &grid()), Err(WeylError::NonFinite { .. })));
    }

    #[test]
    fn real_symbols_give_hermitian_matrices() {
        let h = TameHamiltonian::new(
            1,
            Some(QuadraticHamiltonian::harmonic_oscillator(1)),
            vec![SmoothTerm::SinXSinXi { amplitude: 1.0 }],
        )
        .unwrap();
        let a = PhaseSymbol::quadratic(h.quadratic_part().unwrap()).sum(&PhaseSymbol::tame_terms(&h));
        let op = weyl_quantize(&a, &grid()).unwrap();
        assert!(op.hermitian_defect() < 1e-8);
        assert!(op.is_hermitian());
    }

    #[test]
    fn measure_examples() {
        let cos = ft_measure_potential(&AtomicMeasure::line(&[
            (1.0, Complex64::new(0.5, 0.0)),
            (-1.0, Complex64::new(0.5, 0.0)),
        ]));
        assert!(cos.is_real());
        for x in [-2.0, 0.3, 1.7] {
            assert!((cos.evaluate(&[x], &[0.0]).re - f64::cos(x)).abs() < 1e-15);
        }
        let one = ft_measure_potential(&AtomicMeasure::line(&[(0.0, Complex64::new(1.0, 0.0))]));
        assert_eq!(one.evaluate(&[3.0], &[1.0]), Complex64::new(1.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let list: Vec<(f64, Complex64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(-3.0..3.0),
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let mu = AtomicMeasure::line(&list);
        let v = ft_measure_potential(&mu);
        assert!(!v.is_real());
        let g = grid();
        let sup = g
            .coordinates()
            .iter()
            .map(|&x| v.evaluate(&[x], &[0.0]).norm())
            .fold(0.0, f64::max);
        assert!(sup <= mu.mass() + 1e-12);
    }

    #[test]
    fn sjostrand_estimate_basics() {
        let lat = SymbolLattice::default();
        let zero = PhaseSymbol::constant(1, ZERO);
        assert_eq!(sjostrand_norm_estimate(&zero, &lat).unwrap(), 0.0);
        let cos = ft_measure_potential(&AtomicMeasure::line(&[
            (1.0, Complex64::new(0.5, 0.0)),
            (-1.0, Complex64::new(0.5, 0.0)),
        ]));
        let base = sjostrand_norm_estimate(&cos, &lat).unwrap();
        assert!(base.is_finite() && base > 0.0);
        let c = Complex64::new(-1.5, 2.0);
        let scaled = sjostrand_norm_estimate(&cos.scaled(c), &lat).unwrap();
        assert!((scaled - c.norm() * base).abs() <= 1e-10 * scaled);
        let fine = sjostrand_norm_estimate(&cos, &lat.refined()).unwrap();
        assert!(((fine - base) / base).abs() < 0.05, "{base} vs {fine}");
    }

    #[test]
    fn sjostrand_estimate_controls_l2_norm() {
        let g = Grid::line(12.0, 128).unwrap();
        let lat = SymbolLattice::default();
        let cos = ft_measure_potential(&AtomicMeasure::line(&[
            (1.0, Complex64::new(0.5, 0.0)),
            (-1.0, Complex64::new(0.5, 0.0)),
        ]));
        let c_fit = weyl_quantize(&cos, &g).unwrap().two_norm() / sjostrand_norm_estimate(&cos, &lat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let v = ft_measure_potential(&random_measure(&mut rng, 2));
            let ratio = weyl_quantize(&v, &g).unwrap().two_norm() / sjostrand_norm_estimate(&v, &lat).unwrap();
            assert!(ratio <= 1.5 * c_fit, "ratio {ratio} vs fitted {c_fit}");
        }
    }

    fn small_lattices() -> (PhaseLattice, PhaseLattice) {
        (
            PhaseLattice::centered(1, 0.5, 3.0, 0.5, 3.0).unwrap(),
            PhaseLattice::centered(1, 0.5, 1.0, 0.5, 1.0).unwrap(),
        )
    }

    #[test]
    fn gabor_norm_of_identity() {
        let g = Grid::line(16.0, 128).unwrap();
        let win = Window::standard(g);
        let (zl, wl) = small_lattices();
        let id = WeylOperator::identity(g).unwrap();
        let a = gabor_operator_norm(&id, &win, &zl, &wl).unwrap();
        let b = gabor_operator_norm(&id, &win, &zl, &wl).unwrap();
        assert!(a > 0.0 && (a - b).abs() <= 1e-10 * a);
        // |⟨π(z+w)g, π(w)g⟩| = ‖g‖² e^{−|z|²/4}
        let expected: f64 =
            zl.points().iter().map(|z| (-z.norm().powi(2) / 4.0).exp()).sum::<f64>() * zl.cell_weight() / (2.0 * PI);
        assert!(((a - expected) / expected).abs() < 1e-6, "{a} vs {expected}");
        let c = Complex64::new(0.0, -3.0);
        let scaled = gabor_operator_norm(&id.scaled(c), &win, &zl, &wl).unwrap();
        assert!((scaled - 3.0 * a).abs() <= 1e-10 * scaled);
    }

    #[test]
    fn gabor_norm_is_submultiplicative() {
        let g = Grid::line(16.0, 128).unwrap();
        let win = Window::standard(g);
        let zl = PhaseLattice::centered(1, 0.5, 4.0, 0.5, 4.0).unwrap();
        let wl = PhaseLattice::centered(1, 0.5, 2.0, 0.5, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let a1 = weyl_quantize(&ft_measure_potential(&random_measure(&mut rng, 1)), &g).unwrap();
            let a2 = weyl_quantize(&ft_measure_potential(&random_measure(&mut rng, 1)), &g).unwrap();
            let n1 = gabor_operator_norm(&a1, &win, &zl, &wl).unwrap();
            let n2 = gabor_operator_norm(&a2, &win, &zl, &wl).unwrap();
            let n12 = gabor_operator_norm(&a1.compose(&a2).unwrap(), &win, &zl, &wl).unwrap();
            assert!(n12 <= n1 * n2, "{n12} > {n1} * {n2}");
        }
    }

    #[test]
    fn matrix_round_trip() {
        let g = grid();
        let op = weyl_quantize(&PhaseSymbol::frequency(1), &g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("op.bin");
        op.save(&path).unwrap();
        let back = WeylOperator::load(&path, "xi").unwrap();
        assert_eq!(back.matrix(), op.matrix());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_quantization_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let g = Grid::line(6.0, 32).unwrap();
            let s = PhaseSymbol::position(1).scaled(Complex64::new(a, 0.0))
                .sum(&PhaseSymbol::frequency(1).scaled(Complex64::new(b, 0.0)));
            let lhs = weyl_quantize(&s, &g).unwrap();
            let x = weyl_quantize(&PhaseSymbol::position(1), &g).unwrap();
            let xi = weyl_quantize(&PhaseSymbol::frequency(1), &g).unwrap();
            let rhs = x.matrix() * Complex64::new(a, 0.0) + xi.matrix() * Complex64::new(b, 0.0);
            prop_assert!(max_entry(&(lhs.matrix() - &rhs)) < 1e-9);
        }

        #[test]
        fn prop_real_potentials_are_hermitian(theta in 0.1f64..3.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let c = Complex64::new(re, im);
            let v = ft_measure_potential(&AtomicMeasure::line(&[(theta, c), (-theta, c.conj())]));
            prop_assert!(v.is_real());
            prop_assert!(weyl_quantize(&v, &grid()).unwrap().hermitian_defect() < 1e-8);
        }
    }
}

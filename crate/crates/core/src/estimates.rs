//! Empirical norm ratios behind the restriction, dispersive and measure
//! estimates, operator-norm lower bounds and blow-up scans.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::par;
use crate::phase_space::io::CsvTable;
use crate::phase_space::{
    bin_frequency, fft_nd, fourier_transform, lp_norm, wiener_amalgam_norm, Exponent, Grid, PhaseLattice, PhasePoint,
    PhaseSpaceError, SampledFunction, Window,
};
use crate::propagator::{
    free_propagator, HamiltonianSpec, Propagator, PropagatorCache, PropagatorError, SpectralDecomposition,
};
use crate::symplectic_flow::{det_b, lower_bound_c, quadratic_flow, square_samples, FlowError, QuadraticHamiltonian};
use crate::weyl_quant::{weyl_quantize, LinearOperator, WeylError};

/// Scans skip times with `|det B_t|` below this guard.
pub const EXCEPTIONAL_GUARD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("input has zero norm")]
    ZeroInput,
    #[error("exponents out of order: need p ≤ q, got p = {p}, q = {q}")]
    ExponentOrder { p: f64, q: f64 },
    #[error("measure support point {point:?} lies outside the reliable region (|y| < {limit})")]
    OutsideSupport { point: [f64; 2], limit: f64 },
    #[error("invalid measure: {0}")]
    Measure(String),
    #[error("every time in the scan is exceptional")]
    AllExceptional,
    #[error("need at least {0} samples")]
    Samples(usize),
    #[error("grids do not match")]
    GridMismatch,
    #[error(transparent)]
    PhaseSpace(#[from] PhaseSpaceError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Weyl(#[from] WeylError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// `C^∞` step with `S(u) = 0` for `u ≤ −1`, `S(u) = 1` for `u ≥ 1` and `S(u) + S(−u) = 1`.
pub fn smooth_step(u: f64) -> f64 {
    fn bump(s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (-1.0 / s).exp()
        }
    }
    if u <= -1.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let a = bump((1.0 + u) / 2.0);
    let b = bump((1.0 - u) / 2.0);
    a / (a + b)
}

/// Spatial cutoff `φ`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Cutoff {
    /// `φ ≡ 1`.
    One,
    /// `e^{-|x|²/(2R²)}`.
    Gaussian { radius: f64 },
    /// Equal to 1 on `|x| ≤ flat`, vanishing for `|x| ≥ outer`.
    Plateau { flat: f64, outer: f64 },
}

impl Cutoff {
    pub fn value(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        match *self {
            Cutoff::One => 1.0,
            Cutoff::Gaussian { radius } => (-r * r / (2.0 * radius * radius)).exp(),
            Cutoff::Plateau { flat, outer } => smooth_step(1.0 - 2.0 * (r - flat) / (outer - flat)),
        }
    }

    pub fn sample(&self, grid: &Grid) -> SampledFunction {
        SampledFunction::from_real_fn(*grid, |x| self.value(x))
    }
}

/// Numerator, denominator and their quotient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSample {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

impl RatioSample {
    fn new(numerator: f64, denominator: f64) -> Result<Self, EstimateError> {
        if denominator == 0.0 {
            if numerator == 0.0 {
                return Ok(Self {
                    numerator,
                    denominator,
                    ratio: 0.0,
                });
            }
            return Err(EstimateError::ZeroInput);
        }
        Ok(Self {
            numerator,
            denominator,
            ratio: numerator / denominator,
        })
    }
}

/// `‖F(φ·Uf)‖_p / ‖f‖_p`.
pub fn restriction_ratio(
    u: &dyn LinearOperator,
    f: &SampledFunction,
    cutoff: &SampledFunction,
    p: Exponent,
) -> Result<RatioSample, EstimateError> {
    if !u.grid().same_as(f.grid()) || !cutoff.grid().same_as(f.grid()) {
        return Err(EstimateError::GridMismatch);
    }
    let den = lp_norm(f, p);
    if den == 0.0 {
        return Err(EstimateError::ZeroInput);
    }
    let localized = u.apply(f).mul(cutoff);
    RatioSample::new(lp_norm(&fourier_transform(&localized), p), den)
}

/// `‖Uf‖_{W^{p,q}} / ‖f‖_{W^{q,p}}` for `p ≤ q`.
pub fn dispersive_ratio(
    u: &dyn LinearOperator,
    f: &SampledFunction,
    p: Exponent,
    q: Exponent,
    window: &Window,
    lattice: &PhaseLattice,
) -> Result<RatioSample, EstimateError> {
    if p.value() > q.value() {
        return Err(EstimateError::ExponentOrder {
            p: p.value(),
            q: q.value(),
        });
    }
    let den = wiener_amalgam_norm(f, window, lattice, q, p)?;
    if den == 0.0 {
        return Err(EstimateError::ZeroInput);
    }
    let num = wiener_amalgam_norm(&u.apply(f), window, lattice, p, q)?;
    RatioSample::new(num, den)
}

/// The four links of the transference chain for one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferenceChain {
    /// `‖F(φUf)‖_p / ‖φUf‖_{W^{p,p}}`.
    pub fourier: f64,
    /// `‖φUf‖_{W^{p,p}} / (‖φ‖_{W^{1,r}} ‖Uf‖_{W^{p,p'}})`, `1/r = 1/p − 1/p'`.
    pub multiplication: f64,
    /// `‖Uf‖_{W^{p,p'}} / ‖f‖_{W^{p',p}}`.
    pub dispersive: f64,
    /// `‖f‖_{W^{p',p}} / ‖f‖_p`.
    pub embedding: f64,
    pub cutoff_norm: f64,
    pub restriction: f64,
}

impl TransferenceChain {
    /// Product of the links times `‖φ‖_{W^{1,r}}`; equals `restriction` up to round-off.
    pub fn telescoped(&self) -> f64 {
        self.fourier * self.multiplication * self.dispersive * self.embedding * self.cutoff_norm
    }
}

pub fn transference_chain(
    u: &dyn LinearOperator,
    f: &SampledFunction,
    cutoff: &SampledFunction,
    p: Exponent,
    window: &Window,
    lattice: &PhaseLattice,
) -> Result<TransferenceChain, EstimateError> {
    let pc = p.conjugate();
    let r = Exponent::new(1.0 / (p.reciprocal() - pc.reciprocal()).max(0.0))?;
    let uf = u.apply(f);
    let localized = uf.mul(cutoff);
    let ft = lp_norm(&fourier_transform(&localized), p);
    let w_loc = wiener_amalgam_norm(&localized, window, lattice, p, p)?;
    let w_phi = wiener_amalgam_norm(cutoff, window, lattice, Exponent::ONE, r)?;
    let w_uf = wiener_amalgam_norm(&uf, window, lattice, p, pc)?;
    let w_f = wiener_amalgam_norm(f, window, lattice, pc, p)?;
    let lp = lp_norm(f, p);
    if lp == 0.0 || w_f == 0.0 {
        return Err(EstimateError::ZeroInput);
    }
    Ok(TransferenceChain {
        fourier: ft / w_loc,
        multiplication: w_loc / (w_phi * w_uf),
        dispersive: w_uf / w_f,
        embedding: w_f / lp,
        cutoff_norm: w_phi,
        restriction: ft / lp,
    })
}

/// How a measure was built.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    Circle { radius: f64, points: usize },
    Atoms,
}

/// Finite positive measure `Σ ω_m δ_{y_m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionMeasure {
    dim: usize,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
    kind: MeasureKind,
}

impl RestrictionMeasure {
    /// `M` equispaced points on the circle of radius `R`, weights `2πR/M`.
    pub fn circle(radius: f64, points: usize) -> Result<Self, EstimateError> {
        if !(radius > 0.0) || points == 0 {
            return Err(EstimateError::Measure(format!(
                "circle needs R > 0 and M ≥ 1, got ({radius}, {points})"
            )));
        }
        let w = 2.0 * PI * radius / points as f64;
        Ok(Self {
            dim: 2,
            points: (0..points)
                .map(|m| {
                    let th = 2.0 * PI * m as f64 / points as f64;
                    [radius * th.cos(), radius * th.sin()]
                })
                .collect(),
            weights: vec![w; points],
            kind: MeasureKind::Circle { radius, points },
        })
    }

    pub fn atoms(dim: usize, points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Self, EstimateError> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(EstimateError::Measure("need one positive weight per point".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(EstimateError::Measure("weights must be positive".into()));
        }
        Ok(Self {
            dim,
            points,
            weights,
            kind: MeasureKind::Atoms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Reject support outside `|y_i| < L`.
    pub fn check_within(&self, grid: &Grid) -> Result<(), EstimateError> {
        let limit = grid.half_extent();
        for p in &self.points {
            if p[..self.dim].iter().any(|v| v.abs() >= limit) {
                return Err(EstimateError::OutsideSupport { point: *p, limit });
            }
        }
        Ok(())
    }
}

/// Band-limited trigonometric interpolation of periodic samples at arbitrary points.
pub fn interpolate(f: &SampledFunction, points: &[[f64; 2]]) -> Vec<Complex64> {
    let grid = *f.grid();
    let n = grid.points();
    let h = grid.spacing();
    let l = grid.half_extent();
    let mut spec = f.values().to_vec();
    fft_nd(&mut spec, n, grid.dim(), false);
    let norm = 1.0 / grid.len() as f64;
    let half = n / 2;
    // one row of e^{ik(y+L)} per coordinate, the Nyquist bin as a cosine
    let basis = |y: f64| -> Vec<Complex64> {
        (0..n)
            .map(|m| {
                if m == half {
                    Complex64::new((PI / h * (y + l)).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, bin_frequency(m, n, h) * (y + l))
                }
            })
            .collect()
    };
    par::map_slice(points, |p| {
        let ex = basis(p[0]);
        match grid.dim() {
            1 => ex.iter().zip(&spec).map(|(e, s)| e * s).sum::<Complex64>() * norm,
            _ => {
                let ey = basis(p[1]);
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    let row = &spec[i * n..(i + 1) * n];
                    let inner: Complex64 = row.iter().zip(&ey).map(|(s, e)| s * e).sum();
                    acc += ex[i] * inner;
                }
                acc * norm
            }
        }
    })
}

/// A map between sampled functions, possibly onto a different grid.
pub trait SignalMap: Sync {
    fn input_grid(&self) -> &Grid;
    fn map(&self, f: &SampledFunction) -> SampledFunction;
}

impl<T: LinearOperator> SignalMap for T {
    fn input_grid(&self) -> &Grid {
        self.grid()
    }

    fn map(&self, f: &SampledFunction) -> SampledFunction {
        self.apply(f)
    }
}

/// `f ↦ Ff` onto the dual grid.
#[derive(Debug, Clone, Copy)]
pub struct FourierMap {
    pub grid: Grid,
}

impl SignalMap for FourierMap {
    fn input_grid(&self) -> &Grid {
        &self.grid
    }

    fn map(&self, f: &SampledFunction) -> SampledFunction {
        fourier_transform(f)
    }
}

/// Pointwise multiplication by fixed samples.
#[derive(Debug, Clone)]
pub struct DiagonalMap {
    pub grid: Grid,
    pub diagonal: Vec<Complex64>,
}

impl SignalMap for DiagonalMap {
    fn input_grid(&self) -> &Grid {
        &self.grid
    }

    fn map(&self, f: &SampledFunction) -> SampledFunction {
        let v = f.values().iter().zip(&self.diagonal).map(|(a, b)| a * b).collect();
        SampledFunction::from_raw(self.grid, v)
    }
}

/// `(Σ_m ω_m |Uf(y_m)|^q)^{1/q} / ‖f‖_p`, or `max_m |Uf(y_m)| / ‖f‖_p` for `q = ∞`.
pub fn measure_restriction_ratio(
    u: &dyn SignalMap,
    f: &SampledFunction,
    nu: &RestrictionMeasure,
    p: Exponent,
    q: Exponent,
) -> Result<RatioSample, EstimateError> {
    let den = lp_norm(f, p);
    let out = u.map(f);
    nu.check_within(out.grid())?;
    if den == 0.0 {
        let silent = f.values().iter().all(|v| *v == Complex64::new(0.0, 0.0));
        return if silent {
            Ok(RatioSample {
                numerator: 0.0,
                denominator: 0.0,
                ratio: 0.0,
            })
        } else {
            Err(EstimateError::ZeroInput)
        };
    }
    let values = interpolate(&out, nu.points());
    let num = if q.is_infinite() {
        values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    } else {
        let e = q.value();
        values
            .iter()
            .zip(nu.weights())
            .map(|(v, w)| w * v.norm().powf(e))
            .sum::<f64>()
            .powf(1.0 / e)
    };
    RatioSample::new(num, den)
}

/// Lower bound for `‖map‖_{L^p → L^q}` with its best input.
#[derive(Debug, Clone)]
pub struct NormEstimate {
    pub value: f64,
    pub best: SampledFunction,
    pub evaluations: usize,
}

fn map_ratio(map: &dyn SignalMap, f: &SampledFunction, p: Exponent, q: Exponent) -> f64 {
    let den = lp_norm(f, p);
    if den == 0.0 {
        return 0.0;
    }
    lp_norm(&map.map(f), q) / den
}

/// Seeded random starts followed by coordinate ascent over the moves
/// `{×2, ×½, zero, +δe^{iθ}}`.
pub fn empirical_operator_norm(
    map: &dyn SignalMap,
    p: Exponent,
    q: Exponent,
    samples: usize,
    ascent_steps: usize,
    seed: u64,
) -> Result<NormEstimate, EstimateError> {
    if samples == 0 {
        return Err(EstimateError::Samples(1));
    }
    let grid = *map.input_grid();
    let starts: Vec<SampledFunction> = (0..samples)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let v = (0..grid.len())
                .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                .collect();
            SampledFunction::from_raw(grid, v)
        })
        .collect();
    let ratios = par::map_slice(&starts, |f| map_ratio(map, f, p, q));
    let (mut best_idx, mut best) = (0, ratios[0]);
    for (i, r) in ratios.iter().enumerate() {
        if *r > best {
            best = *r;
            best_idx = i;
        }
    }
    let mut f = starts[best_idx].clone();
    let mut evaluations = samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xA5A5));
    for _ in 0..ascent_steps {
        let mut improved = false;
        for k in 0..grid.len() {
            let old = f.values()[k];
            let scale = f.values().iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
            let theta: f64 = rng.random_range(0.0..2.0 * PI);
            let moves = [
                old * 2.0,
                old * 0.5,
                Complex64::new(0.0, 0.0),
                old + Complex64::from_polar(0.25 * scale, theta),
            ];
            for cand in moves {
                f.values_mut()[k] = cand;
                let r = map_ratio(map, &f, p, q);
                evaluations += 1;
                if r > best * (1.0 + 1e-12) {
                    best = r;
                    improved = true;
                    break;
                }
                f.values_mut()[k] = old;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(NormEstimate {
        value: best,
        best: f,
        evaluations,
    })
}

/// One time in a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub t: f64,
    pub det_b: f64,
    pub ratio: f64,
    pub bound: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Index of the maximizing probe.
    pub argmax: usize,
}

/// Outcome of one scan experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub label: String,
    pub p: f64,
    pub q: f64,
    pub rows: Vec<ScanRow>,
    pub fitted_exponent: f64,
    pub bound_exponent: f64,
    /// `max_t ratio·|det B_t|^{-bound_exponent}`.
    pub fitted_constant: f64,
    /// `max/min` of the normalized ratios over the scan.
    pub normalized_spread: f64,
    pub samples: usize,
    pub skipped: Vec<f64>,
    pub config_hash: String,
}

impl EstimateReport {
    pub fn normalized(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.ratio * r.det_b.abs().powf(-self.bound_exponent))
            .collect()
    }

    pub fn to_csv(&self, plot_data: bool) -> CsvTable {
        let mut header = vec![
            "t",
            "detB",
            "ratio",
            "bound",
            "normalized",
            "numerator",
            "denominator",
            "probe",
        ];
        if plot_data {
            header.extend(["log_detB", "log_ratio", "log_bound"]);
        }
        let mut t = CsvTable::new(header);
        for (r, n) in self.rows.iter().zip(self.normalized()) {
            let mut cells: Vec<String> = [r.t, r.det_b, r.ratio, r.bound, n, r.numerator, r.denominator]
                .iter()
                .map(|v| crate::phase_space::io::fmt_float(*v))
                .collect();
            cells.push(r.argmax.to_string());
            if plot_data {
                for v in [r.det_b.abs().ln(), r.ratio.ln(), r.bound.ln()] {
                    cells.push(crate::phase_space::io::fmt_float(v));
                }
            }
            t.push_cells(cells);
        }
        t
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Propagators of one spec on one grid, sharing a single eigendecomposition
/// that is computed on first use. Dense propagators go through the cache when
/// one is attached.
pub struct PropagatorFamily {
    grid: Grid,
    spec: HamiltonianSpec,
    free: bool,
    spectral: OnceLock<SpectralDecomposition>,
    cache: Option<PropagatorCache>,
}

fn is_free(spec: &HamiltonianSpec) -> bool {
    spec.smooth_terms().is_empty()
        && spec.potential().is_none()
        && spec
            .quadratic()
            .map(|q| *q == QuadraticHamiltonian::free_particle(q.dim()))
            .unwrap_or(false)
}

impl PropagatorFamily {
    pub fn new(spec: &HamiltonianSpec, grid: &Grid) -> Result<Self, EstimateError> {
        let family = Self::with_cache(spec, grid, None);
        if !family.free {
            family.spectral()?;
        }
        Ok(family)
    }

    pub fn with_cache(spec: &HamiltonianSpec, grid: &Grid, cache: Option<PropagatorCache>) -> Self {
        Self {
            grid: *grid,
            spec: spec.clone(),
            free: is_free(spec),
            spectral: OnceLock::new(),
            cache,
        }
    }

    fn spectral(&self) -> Result<&SpectralDecomposition, EstimateError> {
        if let Some(s) = self.spectral.get() {
            return Ok(s);
        }
        let op = weyl_quantize(&self.spec.total_symbol(), &self.grid)?;
        let s = SpectralDecomposition::new(&op)?;
        Ok(self.spectral.get_or_init(|| s))
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn at(&self, t: f64) -> Result<Propagator, EstimateError> {
        if self.free {
            return Ok(free_propagator(t, &self.grid));
        }
        match &self.cache {
            None => Ok(self.spectral()?.at(t)),
            Some(cache) => {
                let (p, _) = cache.get_or_build(&self.spec.fingerprint(), t, &self.grid, || {
                    self.spectral().map(|s| s.at(t)).map_err(|e| match e {
                        EstimateError::Propagator(p) => p,
                        other => PropagatorError::Spec(other.to_string()),
                    })
                })?;
                Ok(p)
            }
        }
    }

    /// `|det B_t|` of the quadratic flow, or the sampled `C̃(t, 0)` when the
    /// Hamiltonian has non-quadratic parts.
    pub fn dispersion(&self, t: f64) -> Result<f64, EstimateError> {
        if self.spec.smooth_terms().is_empty() {
            if let Some(q) = self.spec.quadratic() {
                return Ok(det_b(&quadratic_flow(q, t)).abs());
            }
        }
        let h = self.spec.principal_hamiltonian()?;
        let samples = square_samples(4.0, 9);
        Ok(lower_bound_c(&h, t, 0.0, &samples, 200)?.value)
    }
}

/// Probe inputs: fixed functions, Gaussian bumps, and bumps propagated back by `U(−t)`.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub fixed: Vec<SampledFunction>,
    pub bump_widths: Vec<f64>,
    pub backward: bool,
}

impl ProbeSet {
    pub fn probes(&self, family: &PropagatorFamily, t: f64) -> Result<Vec<SampledFunction>, EstimateError> {
        let grid = *family.grid();
        let mut out = self.fixed.clone();
        let bumps: Vec<SampledFunction> = self
            .bump_widths
            .iter()
            .map(|s| {
                SampledFunction::from_real_fn(grid, |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s * s)).exp())
            })
            .collect();
        if self.backward {
            let back = family.at(-t)?;
            out.extend(bumps.iter().map(|b| back.apply(b)));
        }
        out.extend(bumps);
        Ok(out)
    }
}

/// Which ratio a scan maximizes over the probes.
pub enum ScanEstimator<'a> {
    Restriction {
        cutoff: &'a SampledFunction,
    },
    Dispersive {
        q: Exponent,
        window: &'a Window,
        lattice: &'a PhaseLattice,
    },
}

/// Per `t`: the probe-maximal ratio, a log-log fit against `|det B_t|`, and the
/// predicted exponent `−(2/p − 1)` (restriction) or `−(1/p − 1/q)` (dispersive).
pub fn blowup_scan(
    family: &PropagatorFamily,
    p: Exponent,
    t_list: &[f64],
    probes: &ProbeSet,
    estimator: &ScanEstimator<'_>,
    label: &str,
) -> Result<EstimateReport, EstimateError> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut samples = 0;
    for &t in t_list {
        let det = family.dispersion(t)?;
        if det < EXCEPTIONAL_GUARD {
            skipped.push(t);
            continue;
        }
        let u = family.at(t)?;
        let fs = probes.probes(family, t)?;
        samples += fs.len();
        let results = par::map_slice(&fs, |f| match estimator {
            ScanEstimator::Restriction { cutoff } => restriction_ratio(&u, f, cutoff, p),
            ScanEstimator::Dispersive { q, window, lattice } => dispersive_ratio(&u, f, p, *q, window, lattice),
        });
        let mut best: Option<(usize, RatioSample)> = None;
        for (i, r) in results.into_iter().enumerate() {
            let r = r?;
            if best.map(|(_, b)| r.ratio > b.ratio).unwrap_or(true) {
                best = Some((i, r));
            }
        }
        let (argmax, b) = best.ok_or(EstimateError::Samples(1))?;
        rows.push(ScanRow {
            t,
            det_b: det,
            ratio: b.ratio,
            bound: f64::NAN,
            numerator: b.numerator,
            denominator: b.denominator,
            argmax,
        });
    }
    if rows.is_empty() {
        return Err(EstimateError::AllExceptional);
    }
    let (q, bound_exponent) = match estimator {
        ScanEstimator::Restriction { .. } => (p.value(), -(2.0 * p.reciprocal() - 1.0)),
        ScanEstimator::Dispersive { q, .. } => (q.value(), -(p.reciprocal() - q.reciprocal())),
    };
    let x: Vec<f64> = rows.iter().map(|r| r.det_b.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ratio.ln()).collect();
    let (fitted_exponent, _) = fit_line(&x, &y);
    let normalized: Vec<f64> = rows.iter().map(|r| r.ratio * r.det_b.powf(-bound_exponent)).collect();
    let fitted_constant = normalized.iter().cloned().fold(0.0, f64::max);
    let min = normalized.iter().cloned().fold(f64::INFINITY, f64::min);
    for r in rows.iter_mut() {
        r.bound = fitted_constant * r.det_b.powf(bound_exponent);
    }
    Ok(EstimateReport {
        label: label.to_string(),
        p: p.value(),
        q,
        rows,
        fitted_exponent,
        bound_exponent,
        fitted_constant,
        normalized_spread: fitted_constant / min,
        samples,
        skipped,
        config_hash: String::new(),
    })
}

/// `(1/2π)‖F(φUf)‖₁` dominates `|Uf(y)|` wherever `φ(y) = 1`.
pub fn pointwise_from_restriction(restriction_numerator: f64, dim: usize) -> f64 {
    restriction_numerator / (2.0 * PI).powi(dim as i32)
}

/// Convenience: the default d = 1 phase lattice for dispersive ratios.
pub fn dispersive_lattice(
    x_radius: f64,
    xi_radius: f64,
    step_x: f64,
    step_xi: f64,
) -> Result<PhaseLattice, EstimateError> {
    Ok(PhaseLattice::centered(1, step_x, x_radius, step_xi, xi_radius)?)
}

/// Phase-space points on which a probe's STFT is negligible, used by callers
/// that need to reject probes leaking past the lattice.
pub fn lattice_edge(lattice: &PhaseLattice) -> PhasePoint {
    let xs = lattice.x_nodes();
    let ks = lattice.xi_nodes();
    PhasePoint::line(xs[xs.len() - 1], ks[ks.len() - 1])
}

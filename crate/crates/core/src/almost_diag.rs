//! Gabor matrices `⟨U π(z)g, π(w)g⟩`, radial decay envelopes around a
//! flow, polynomial-decay fits and the envelope composition law.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::par;
use crate::phase_space::io::CsvTable;
use crate::phase_space::{phase_shift, stft, PhaseLattice, PhasePoint, PhaseSpaceError, Window};
use crate::weyl_quant::LinearOperator;

/// Envelope values are clamped to this floor before taking logarithms.
pub const ENVELOPE_FLOOR: f64 = 1e-12;
/// Radial bin width of the default envelope.
pub const BIN_WIDTH: f64 = 0.5;
/// Outer radius of the default envelope.
pub const R_MAX: f64 = 8.0;
/// Number of angular sectors in the per-direction diagnostic.
pub const DIRECTIONS: usize = 8;
/// Relative slack allowed by the composition check.
pub const COMPOSITION_SLACK: f64 = 0.1;

#[derive(Debug, Error)]
pub enum AlmostDiagError {
    #[error("window and operator live on different grids")]
    GridMismatch,
    #[error("every column of the Gabor matrix is flagged")]
    AllFlagged,
    #[error("need at least {needed} usable bins, found {found}")]
    InsufficientBins { needed: usize, found: usize },
    #[error("invalid bins: {0}")]
    Bins(String),
    #[error("lattices of the factors differ")]
    LatticeMismatch,
    #[error(transparent)]
    PhaseSpace(#[from] PhaseSpaceError),
}

/// Phase-space map attached to a Gabor matrix.
pub type FlowMap<'a> = dyn Fn(&PhasePoint) -> PhasePoint + Sync + 'a;

/// Matrix elements `M[z, w] = ⟨U π(z)g, π(w)g⟩` with the flow image `χ(z)`
/// recorded per column.
#[derive(Debug, Clone)]
pub struct GaborMatrix {
    z_points: Vec<PhasePoint>,
    w_lattice: PhaseLattice,
    values: Vec<Complex64>,
    images: Vec<PhasePoint>,
    flagged: Vec<bool>,
}

/// Points `(k·δ, l·δ)` of the d = 1 phase plane with `|z| ≤ radius`.
pub fn disk_points(radius: f64, step: f64) -> Vec<PhasePoint> {
    let k = (radius / step).floor() as i64;
    let mut out = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            let z = PhasePoint::line(i as f64 * step, j as f64 * step);
            if z.norm() <= radius * (1.0 + 1e-12) {
                out.push(z);
            }
        }
    }
    out
}

fn inside_box(p: &PhasePoint, lat: &PhaseLattice) -> bool {
    let (xs, xis) = (lat.x_nodes(), lat.xi_nodes());
    let (xlo, xhi) = (xs[0], xs[xs.len() - 1]);
    let (klo, khi) = (xis[0], xis[xis.len() - 1]);
    let d = lat.dim();
    p.is_finite() && (0..d).all(|i| p.x[i] >= xlo && p.x[i] <= xhi && p.xi[i] >= klo && p.xi[i] <= khi)
}

/// Compute every entry. Columns whose flow image leaves the `w` lattice box
/// are flagged and later excluded from envelopes.
pub fn gabor_matrix(
    op: &dyn LinearOperator,
    window: &Window,
    z_points: &[PhasePoint],
    w_lattice: &PhaseLattice,
    flow: &FlowMap<'_>,
) -> Result<GaborMatrix, AlmostDiagError> {
    if !op.grid().same_as(window.grid()) {
        return Err(AlmostDiagError::GridMismatch);
    }
    w_lattice.check_within(window.grid())?;
    let columns = par::map_slice(z_points, |z| {
        let image = op.apply(&phase_shift(window.base(), z));
        stft(&image, window, w_lattice).map(|a| a.values().to_vec())
    });
    let mut values = Vec::with_capacity(z_points.len() * w_lattice.len());
    for c in columns {
        values.extend(c?);
    }
    let images: Vec<PhasePoint> = z_points.iter().map(flow).collect();
    let flagged = images.iter().map(|p| !inside_box(p, w_lattice)).collect();
    Ok(GaborMatrix {
        z_points: z_points.to_vec(),
        w_lattice: w_lattice.clone(),
        values,
        images,
        flagged,
    })
}

impl GaborMatrix {
    pub fn z_points(&self) -> &[PhasePoint] {
        &self.z_points
    }

    pub fn w_lattice(&self) -> &PhaseLattice {
        &self.w_lattice
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn flow_images(&self) -> &[PhasePoint] {
        &self.images
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn entry(&self, zi: usize, wi: usize) -> Complex64 {
        self.values[zi * self.w_lattice.len() + wi]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// The same entries recentred at a different flow.
    pub fn with_flow(&self, flow: &FlowMap<'_>) -> GaborMatrix {
        let images: Vec<PhasePoint> = self.z_points.iter().map(flow).collect();
        let flagged = images.iter().map(|p| !inside_box(p, &self.w_lattice)).collect();
        GaborMatrix {
            images,
            flagged,
            ..self.clone()
        }
    }

    pub fn scaled(&self, c: Complex64) -> GaborMatrix {
        GaborMatrix {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// `(|w − χ(z)|, |M|, direction sector)` over unflagged columns.
    fn displacements(&self) -> Vec<(f64, f64, usize)> {
        let ws = self.w_lattice.points();
        let nw = ws.len();
        let mut out = Vec::new();
        for zi in (0..self.z_points.len()).filter(|&zi| !self.flagged[zi]) {
            let img = self.images[zi];
            let row = &self.values[zi * nw..(zi + 1) * nw];
            for (w, v) in ws.iter().zip(row) {
                let d = *w - img;
                let angle = d.xi[0].atan2(d.x[0]).rem_euclid(2.0 * PI);
                let sector = ((angle / (2.0 * PI) * DIRECTIONS as f64 + 0.5) as usize) % DIRECTIONS;
                out.push((d.norm(), v.norm(), sector));
            }
        }
        out
    }
}

/// Empirical `H`: radial suprema of `|M|` around the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayEnvelope {
    /// Left bin edges.
    pub edges: Vec<f64>,
    pub width: f64,
    /// `None` for bins without entries.
    pub values: Vec<Option<f64>>,
    /// Per-direction suprema, `[sector][bin]`.
    pub directional: Vec<Vec<f64>>,
}

/// Least-squares power-law fit `E ≈ e^c (1+r)^{-N}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    /// Largest absolute log-deviation from the fitted line.
    pub residual: f64,
    pub bins: usize,
    /// Steeper decay on the outer half of the bins than on the inner half.
    pub super_polynomial: bool,
}

/// Radial sup-binning with bins `[kδ, (k+1)δ)` covering `[0, r_max)`.
pub fn envelope(m: &GaborMatrix, width: f64, r_max: f64) -> Result<DecayEnvelope, AlmostDiagError> {
    if !(width > 0.0 && r_max > width) {
        return Err(AlmostDiagError::Bins(format!("width {width}, r_max {r_max}")));
    }
    if m.flagged.iter().all(|f| *f) {
        return Err(AlmostDiagError::AllFlagged);
    }
    let bins = (r_max / width).round() as usize;
    let mut values = vec![None; bins];
    let mut directional = vec![vec![0.0; bins]; DIRECTIONS];
    for (r, v, s) in m.displacements() {
        let b = (r / width).floor() as usize;
        if b >= bins {
            continue;
        }
        let slot = values[b].get_or_insert(0.0);
        if v > *slot {
            *slot = v;
        }
        if v > directional[s][b] {
            directional[s][b] = v;
        }
    }
    Ok(DecayEnvelope {
        edges: (0..bins).map(|k| k as f64 * width).collect(),
        width,
        values,
        directional,
    })
}

pub fn default_envelope(m: &GaborMatrix) -> Result<DecayEnvelope, AlmostDiagError> {
    envelope(m, BIN_WIDTH, R_MAX)
}

impl DecayEnvelope {
    /// Envelope from explicit bin values, mainly for synthetic fits.
    pub fn from_values(edges: Vec<f64>, width: f64, values: Vec<f64>) -> Self {
        let bins = values.len();
        Self {
            edges,
            width,
            values: values.into_iter().map(Some).collect(),
            directional: vec![vec![0.0; bins]; DIRECTIONS],
        }
    }

    pub fn value_at(&self, r: f64) -> Option<f64> {
        let b = (r / self.width).floor() as usize;
        self.values.get(b).copied().flatten()
    }

    /// Discretized `‖H‖₁ = Σ E_j · π(r_{j+1}² − r_j²)`.
    pub fn l1_norm(&self) -> f64 {
        self.edges
            .iter()
            .zip(&self.values)
            .map(|(r, v)| {
                let outer = r + self.width;
                v.unwrap_or(0.0) * PI * (outer * outer - r * r)
            })
            .sum()
    }

    /// Max over bins of the ratio between largest and smallest directional supremum.
    pub fn anisotropy(&self) -> Vec<f64> {
        (0..self.edges.len())
            .map(|b| {
                let vals: Vec<f64> = self.directional.iter().map(|d| d[b]).filter(|v| *v > 0.0).collect();
                if vals.is_empty() {
                    1.0
                } else {
                    let hi = vals.iter().cloned().fold(0.0, f64::max);
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    hi / lo.max(ENVELOPE_FLOOR)
                }
            })
            .collect()
    }

    /// Columns `r, E, log1p_r, log_E, fit` plus one column per direction.
    pub fn to_csv(&self, fit: Option<&DecayFit>) -> CsvTable {
        let mut header: Vec<String> = ["r", "E", "log1p_r", "log_E", "fit"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..DIRECTIONS).map(|s| format!("dir_{s}")));
        let mut t = CsvTable::new(header);
        for (b, (r, v)) in self.edges.iter().zip(&self.values).enumerate() {
            let Some(v) = v else { continue };
            let l = (1.0 + r).ln();
            let fitted = fit.map(|f| f.intercept - f.exponent * l).unwrap_or(f64::NAN);
            let mut row = vec![*r, *v, l, v.max(ENVELOPE_FLOOR).ln(), fitted];
            row.extend(self.directional.iter().map(|d| d[b]));
            t.push_numbers(&row);
        }
        t
    }
}

fn line_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).abs())
        .fold(0.0, f64::max);
    (slope, intercept, residual)
}

/// Fit `log E` against `log(1+r)` on bins with `r_min ≤ r` and `r + δ ≤ r_max`.
pub fn fit_polynomial_decay(e: &DecayEnvelope, r_min: f64) -> Result<DecayFit, AlmostDiagError> {
    let r_max = e.edges.last().map(|r| r + e.width).unwrap_or(0.0);
    fit_polynomial_decay_range(e, r_min, r_max)
}

pub fn fit_polynomial_decay_range(e: &DecayEnvelope, r_min: f64, r_max: f64) -> Result<DecayFit, AlmostDiagError> {
    let points: Vec<(f64, f64)> = e
        .edges
        .iter()
        .zip(&e.values)
        .filter(|(r, _)| **r >= r_min - 1e-12 && **r + e.width <= r_max + 1e-12)
        .filter_map(|(r, v)| v.map(|v| ((1.0 + r).ln(), v.max(ENVELOPE_FLOOR).ln())))
        .collect();
    if points.len() < 4 {
        return Err(AlmostDiagError::InsufficientBins {
            needed: 4,
            found: points.len(),
        });
    }
    let (slope, intercept, residual) = line_fit(&points);
    let half = points.len() / 2;
    let super_polynomial = if half >= 2 && points.len() - half >= 2 {
        let inner = line_fit(&points[..half]).0;
        let outer = line_fit(&points[half..]).0;
        outer < inner - 0.5
    } else {
        false
    };
    Ok(DecayFit {
        exponent: -slope,
        intercept,
        residual,
        bins: points.len(),
        super_polynomial,
    })
}

/// Discretized `‖H‖₁` of the factors and of the product against the composed flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionReport {
    pub first: f64,
    pub second: f64,
    pub product: f64,
    /// `‖H₁‖₁ ‖H₂‖₁ (1 + slack)`.
    pub bound: f64,
    pub holds: bool,
}

/// Build the Gabor matrices of `A₁`, `A₂` and `A₁A₂` and compare envelope norms.
#[allow(clippy::too_many_arguments)]
pub fn composition_envelope_check(
    first: &dyn LinearOperator,
    first_flow: &FlowMap<'_>,
    second: &dyn LinearOperator,
    second_flow: &FlowMap<'_>,
    window: &Window,
    z_points: &[PhasePoint],
    w_lattice: &PhaseLattice,
) -> Result<CompositionReport, AlmostDiagError> {
    if !first.grid().same_as(second.grid()) {
        return Err(AlmostDiagError::LatticeMismatch);
    }
    let product = Composed { first, second };
    let composed_flow = |z: &PhasePoint| first_flow(&second_flow(z));
    let h1 = default_envelope(&gabor_matrix(first, window, z_points, w_lattice, first_flow)?)?.l1_norm();
    let h2 = default_envelope(&gabor_matrix(second, window, z_points, w_lattice, second_flow)?)?.l1_norm();
    let h = default_envelope(&gabor_matrix(&product, window, z_points, w_lattice, &composed_flow)?)?.l1_norm();
    let bound = h1 * h2 * (1.0 + COMPOSITION_SLACK);
    Ok(CompositionReport {
        first: h1,
        second: h2,
        product: h,
        bound,
        holds: h <= bound,
    })
}

struct Composed<'a> {
    first: &'a dyn LinearOperator,
    second: &'a dyn LinearOperator,
}

impl LinearOperator for Composed<'_> {
    fn grid(&self) -> &crate::phase_space::Grid {
        self.first.grid()
    }

    fn apply(&self, f: &crate::phase_space::SampledFunction) -> crate::phase_space::SampledFunction {
        self.first.apply(&self.second.apply(f))
    }
}

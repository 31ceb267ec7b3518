//! Conic decay of the STFT, homogeneous phase-space cutoffs, and the
//! microlocal restriction inequality. Phase space is `R²` (`d = 1`).

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::almost_diag::ENVELOPE_FLOOR;
use crate::estimates::{fit_line, smooth_step, EXCEPTIONAL_GUARD};
use crate::par;
use crate::phase_space::io::{fmt_float, CsvTable};
use crate::phase_space::{
    fourier_transform, lp_norm, stft, stft_inverse, Exponent, PhaseArray, PhaseLattice, PhasePoint, PhaseSpaceError,
    SampledFunction, Window,
};
use crate::symplectic_flow::{det_b, SymplecticMatrix};
use crate::weyl_quant::{weyl_quantize, LinearOperator, PhaseSymbol, SymbolClass, WeylError};

/// Sectors whose fitted slope exceeds this count as slow-decay directions.
pub const SLOW_SLOPE: f64 = -2.0;
/// Radii over which slow decay is judged.
pub const SLOPE_WINDOW: (f64, f64) = (3.0, 8.0);
/// Annulus width around each profile radius.
pub const RADIAL_BIN: f64 = 0.5;
/// Default angular mollifier width, measured in `cos θ`.
pub const DEFAULT_ANGULAR_WIDTH: f64 = 0.2;
/// Required directions must be covered with this much angular room (radians).
pub const COVER_MARGIN: f64 = 0.05;

#[derive(Debug, Error)]
pub enum MicrolocalError {
    #[error("invalid sector: {0}")]
    Sector(String),
    #[error("invalid cutoff: {0}")]
    Cutoff(String),
    #[error("no lattice point of the sector lies at radius {radius}")]
    EmptySector { radius: f64 },
    #[error("radius {radius} exceeds the lattice coverage {coverage}")]
    Radii { radius: f64, coverage: f64 },
    #[error("exceptional time: |det B| = {det_b:.3e}")]
    Exceptional { det_b: f64 },
    #[error("cutoff does not cover the required direction ({}, {})", direction[0], direction[1])]
    ConeNotCovered { direction: [f64; 2] },
    #[error("microlocal checks are one-dimensional, got d = {0}")]
    Dimension(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    PhaseSpace(#[from] PhaseSpaceError),
    #[error(transparent)]
    Weyl(#[from] WeylError),
}

fn unit(v: [f64; 2]) -> Option<[f64; 2]> {
    let n = v[0].hypot(v[1]);
    (n > 0.0 && n.is_finite()).then(|| [v[0] / n, v[1] / n])
}

fn angle_of(v: [f64; 2]) -> f64 {
    v[1].atan2(v[0])
}

/// Smallest angle between two directions.
pub fn angular_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = (angle_of(a) - angle_of(b)).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Open cone `{z : ∠(z, ω) < α, |z| ≥ r₀}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConicSector {
    direction: [f64; 2],
    half_angle: f64,
    inner_radius: f64,
}

impl ConicSector {
    pub fn new(direction: [f64; 2], half_angle: f64, inner_radius: f64) -> Result<Self, MicrolocalError> {
        let direction = unit(direction).ok_or_else(|| MicrolocalError::Sector("zero direction".into()))?;
        if !(half_angle > 0.0 && half_angle < PI / 2.0) {
            return Err(MicrolocalError::Sector(format!(
                "half-angle {half_angle} outside (0, π/2)"
            )));
        }
        if !(inner_radius >= 1.0) {
            return Err(MicrolocalError::Sector(format!("inner radius {inner_radius} below 1")));
        }
        Ok(Self {
            direction,
            half_angle,
            inner_radius,
        })
    }

    pub fn from_angle(theta: f64, half_angle: f64, inner_radius: f64) -> Result<Self, MicrolocalError> {
        Self::new([theta.cos(), theta.sin()], half_angle, inner_radius)
    }

    /// Half-angle `acos(δ/2)`: with mollifier width `δ` the cutoffs of `ω` and
    /// `−ω` sum to one.
    pub fn half_space(direction: [f64; 2], angular_width: f64) -> Result<Self, MicrolocalError> {
        Self::new(direction, (angular_width / 2.0).acos(), 1.0)
    }

    pub fn direction(&self) -> [f64; 2] {
        self.direction
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn contains(&self, z: &PhasePoint) -> bool {
        let v = [z.x[0], z.xi[0]];
        let r = v[0].hypot(v[1]);
        r >= self.inner_radius && angular_distance(v, self.direction) < self.half_angle
    }

    /// Angular factor: 1 inside the cone, 0 beyond `cos θ ≤ cos α − δ`.
    fn angular_factor(&self, omega: [f64; 2], angular_width: f64) -> f64 {
        let c = omega[0] * self.direction[0] + omega[1] * self.direction[1];
        smooth_step(2.0 * (c - self.half_angle.cos()) / angular_width + 1.0)
    }
}

/// Radial profile of `sup |V_g f|` over one sector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProfile {
    pub sector: ConicSector,
    pub radii: Vec<f64>,
    pub sup: Vec<f64>,
    pub slope: f64,
}

impl ConeProfile {
    pub fn is_slow(&self) -> bool {
        self.slope > SLOW_SLOPE
    }
}

/// Profiles of several sectors as one CSV with columns `r, sup, sector`.
pub fn profiles_csv(profiles: &[ConeProfile]) -> CsvTable {
    let mut t = CsvTable::new(["r", "sup", "sector"]);
    for (id, p) in profiles.iter().enumerate() {
        for (r, s) in p.radii.iter().zip(&p.sup) {
            t.push_cells(vec![fmt_float(*r), fmt_float(*s), id.to_string()]);
        }
    }
    t
}

fn lattice_coverage(lattice: &PhaseLattice) -> f64 {
    let reach = |nodes: &[f64]| nodes.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())).max(0.0);
    let xs = lattice.x_nodes();
    let ks = lattice.xi_nodes();
    let lo = reach(&[xs[0], xs[xs.len() - 1]]);
    let hi = reach(&[ks[0], ks[ks.len() - 1]]);
    lo.min(hi)
}

fn profile_from(
    coefficients: &PhaseArray,
    sector: &ConicSector,
    radii: &[f64],
) -> Result<ConeProfile, MicrolocalError> {
    let lattice = coefficients.lattice();
    let coverage = lattice_coverage(lattice);
    let mut sup = vec![None::<f64>; radii.len()];
    for (flat, v) in coefficients.values().iter().enumerate() {
        let z = lattice.point_at(flat);
        let r = z.x[0].hypot(z.xi[0]);
        if !sector.contains(&PhasePoint::line(z.x[0], z.xi[0])) {
            continue;
        }
        for (k, rk) in radii.iter().enumerate() {
            if r >= rk - RADIAL_BIN / 2.0 && r < rk + RADIAL_BIN / 2.0 {
                let s = sup[k].get_or_insert(0.0);
                *s = s.max(v.norm());
            }
        }
    }
    let mut values = Vec::with_capacity(radii.len());
    for (rk, s) in radii.iter().zip(sup) {
        if rk + RADIAL_BIN / 2.0 > coverage + 1e-12 {
            return Err(MicrolocalError::Radii { radius: *rk, coverage });
        }
        values.push(
            s.ok_or(MicrolocalError::EmptySector { radius: *rk })?
                .max(ENVELOPE_FLOOR),
        );
    }
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (slope, _) = fit_line(&x, &y);
    Ok(ConeProfile {
        sector: *sector,
        radii: radii.to_vec(),
        sup: values,
        slope,
    })
}

fn check_line(f: &SampledFunction) -> Result<(), MicrolocalError> {
    match f.grid().dim() {
        1 => Ok(()),
        d => Err(MicrolocalError::Dimension(d)),
    }
}

/// `r ↦ sup{|V_g f(z)| : z ∈ Γ, ||z| − r| < ½·bin}` and its log-log slope.
pub fn cone_decay(
    f: &SampledFunction,
    window: &Window,
    lattice: &PhaseLattice,
    sector: &ConicSector,
    radii: &[f64],
) -> Result<ConeProfile, MicrolocalError> {
    check_line(f)?;
    profile_from(&stft(f, window, lattice)?, sector, radii)
}

/// Profiles for `count` evenly spaced sectors of half-angle `half_angle`, sharing one STFT.
pub fn sector_sweep(
    f: &SampledFunction,
    window: &Window,
    lattice: &PhaseLattice,
    count: usize,
    half_angle: f64,
    radii: &[f64],
) -> Result<Vec<ConeProfile>, MicrolocalError> {
    check_line(f)?;
    let coefficients = stft(f, window, lattice)?;
    let sectors = (0..count)
        .map(|k| ConicSector::from_angle(2.0 * PI * k as f64 / count as f64, half_angle, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    par::map_slice(&sectors, |s| profile_from(&coefficients, s, radii))
        .into_iter()
        .collect()
}

/// Directions of slow decay: sectors with slope above [`SLOW_SLOPE`] are grouped
/// into runs of neighbours, and each run reports the direction of its largest
/// coefficient on the outer half of the radii.
pub fn slow_directions(
    f: &SampledFunction,
    window: &Window,
    lattice: &PhaseLattice,
    count: usize,
    radii: &[f64],
) -> Result<Vec<[f64; 2]>, MicrolocalError> {
    check_line(f)?;
    let half_angle = PI / count as f64;
    let coefficients = stft(f, window, lattice)?;
    let sectors = (0..count)
        .map(|k| ConicSector::from_angle(2.0 * PI * k as f64 / count as f64, half_angle, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    let slow: Vec<bool> = par::map_slice(&sectors, |s| profile_from(&coefficients, s, radii))
        .into_iter()
        .map(|p| p.map(|p| p.is_slow()))
        .collect::<Result<_, _>>()?;
    if slow.iter().all(|s| *s) || !slow.iter().any(|s| *s) {
        return Ok(if slow[0] {
            vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
        } else {
            vec![]
        });
    }
    // rotate so that index 0 starts a fast run, then collect slow runs
    let start = (0..count).find(|&k| !slow[k]).unwrap_or(0);
    let mut runs: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for o in 0..count {
        let k = (start + o) % count;
        if slow[k] {
            current.push(k);
        } else if !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    let r_hi = radii.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + RADIAL_BIN / 2.0;
    let r_lo = (radii.iter().cloned().fold(f64::INFINITY, f64::min) + r_hi) / 2.0;
    let lattice = coefficients.lattice();
    let mut out = Vec::new();
    for run in runs {
        let mut best: Option<(f64, [f64; 2])> = None;
        for (flat, v) in coefficients.values().iter().enumerate() {
            let z = lattice.point_at(flat);
            let p = PhasePoint::line(z.x[0], z.xi[0]);
            let r = z.x[0].hypot(z.xi[0]);
            if r < r_lo || r >= r_hi || !run.iter().any(|&k| sectors[k].contains(&p)) {
                continue;
            }
            if best.map(|(m, _)| v.norm() > m).unwrap_or(true) {
                best = Some((v.norm(), [z.x[0] / r, z.xi[0] / r]));
            }
        }
        if let Some((_, d)) = best {
            out.push(d);
        }
    }
    Ok(out)
}

/// `ψ(z) = 1 − ρ(|z|)(1 − Θ(z/|z|))` with `Θ = 1 − Π(1 − θ_Γ)` over the covered
/// sectors and `ρ` rising from 0 at `|z| = 1` to 1 at `|z| = 1 + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousCutoff {
    sectors: Vec<ConicSector>,
    epsilon: f64,
    angular_width: f64,
    full: bool,
}

/// Arcs `[θ − α, θ + α]` covering the whole circle.
fn arcs_cover_circle(sectors: &[ConicSector]) -> bool {
    let mut arcs: Vec<(f64, f64)> = sectors
        .iter()
        .map(|s| {
            let c = angle_of(s.direction).rem_euclid(2.0 * PI);
            (c - s.half_angle, c + s.half_angle)
        })
        .collect();
    if arcs.is_empty() {
        return false;
    }
    // unroll arcs crossing 0 so that [0, 2π) is checked on a line
    let extra: Vec<(f64, f64)> = arcs
        .iter()
        .flat_map(|&(a, b)| [(a - 2.0 * PI, b - 2.0 * PI), (a + 2.0 * PI, b + 2.0 * PI)])
        .collect();
    arcs.extend(extra);
    arcs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach = 0.0;
    for (a, b) in arcs {
        if a > reach {
            if a >= 2.0 * PI {
                break;
            }
            if b < 0.0 {
                continue;
            }
            return false;
        }
        reach = f64::max(reach, b);
        if reach >= 2.0 * PI {
            return true;
        }
    }
    reach >= 2.0 * PI
}

pub fn build_cutoff(sectors: &[ConicSector], epsilon: f64) -> Result<HomogeneousCutoff, MicrolocalError> {
    build_cutoff_with(sectors, epsilon, DEFAULT_ANGULAR_WIDTH)
}

pub fn build_cutoff_with(
    sectors: &[ConicSector],
    epsilon: f64,
    angular_width: f64,
) -> Result<HomogeneousCutoff, MicrolocalError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MicrolocalError::Cutoff(format!(
            "smoothing scale {epsilon} must be positive"
        )));
    }
    if !(angular_width > 0.0 && angular_width < 2.0) {
        return Err(MicrolocalError::Cutoff(format!(
            "angular width {angular_width} outside (0, 2)"
        )));
    }
    Ok(HomogeneousCutoff {
        full: arcs_cover_circle(sectors),
        sectors: sectors.to_vec(),
        epsilon,
        angular_width,
    })
}

impl HomogeneousCutoff {
    pub fn sectors(&self) -> &[ConicSector] {
        &self.sectors
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    /// `Θ(ω)` for a unit direction.
    pub fn angular(&self, omega: [f64; 2]) -> f64 {
        if self.full {
            return 1.0;
        }
        1.0 - self
            .sectors
            .iter()
            .map(|s| 1.0 - s.angular_factor(omega, self.angular_width))
            .product::<f64>()
    }

    pub fn value(&self, x: f64, xi: f64) -> f64 {
        if self.full {
            return 1.0;
        }
        let r = x.hypot(xi);
        let rho = smooth_step(2.0 * (r - 1.0) / self.epsilon - 1.0);
        if rho == 0.0 {
            return 1.0;
        }
        1.0 - rho * (1.0 - self.angular([x / r, xi / r]))
    }

    /// Whether `ψ = 1` on every direction within `margin` of `direction`.
    pub fn covers(&self, direction: [f64; 2], margin: f64) -> bool {
        if self.full {
            return true;
        }
        let base = angle_of(direction);
        (0..=16).all(|k| {
            let a = base - margin + 2.0 * margin * k as f64 / 16.0;
            self.angular([a.cos(), a.sin()]) >= 1.0
        })
    }

    pub fn symbol(&self) -> PhaseSymbol {
        let me = self.clone();
        PhaseSymbol::new(1, SymbolClass::Sjostrand, true, "homogeneous_cutoff", move |x, xi| {
            Complex64::new(me.value(x[0], xi[0]), 0.0)
        })
    }
}

/// `‖⟨x⟩^{-N} f‖_{H^{-N}}`, normalized so that `N = 0` gives `‖f‖₂`.
pub fn weighted_negative_sobolev(f: &SampledFunction, order: u32) -> f64 {
    let n = order as i32;
    let damped = f.multiplied_by(|x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Complex64::new((1.0 + r2).powf(-n as f64 / 2.0), 0.0)
    });
    let spectrum = fourier_transform(&damped).multiplied_by(|k| {
        let r2: f64 = k.iter().map(|v| v * v).sum();
        Complex64::new((1.0 + r2).powf(-n as f64 / 2.0), 0.0)
    });
    lp_norm(&spectrum, Exponent::TWO) / (2.0 * PI).powf(f.grid().dim() as f64 / 2.0)
}

/// One input of the microlocal inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroRow {
    pub name: String,
    /// `‖F(φUf)‖_p`.
    pub lhs: f64,
    /// `‖ψ^w f‖_p`.
    pub principal: f64,
    /// `‖⟨x⟩^{-N} f‖_{H^{-N}}`.
    pub remainder: f64,
    /// `(C·principal + C_N·remainder) / lhs`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroReport {
    pub p: f64,
    pub order: u32,
    pub det_b: f64,
    pub c: f64,
    pub c_n: f64,
    pub rows: Vec<MicroRow>,
}

impl MicroReport {
    /// Whether `lhs ≤ C·principal + C_N·remainder` for every row, up to `tol` relative.
    pub fn holds(&self, tol: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.lhs <= (self.c * r.principal + self.c_n * r.remainder) * (1.0 + tol))
    }

    /// Terms `(C·principal, C_N·remainder)` for an input outside the corpus.
    pub fn terms(&self, principal: f64, remainder: f64) -> (f64, f64) {
        (self.c * principal, self.c_n * remainder)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["name", "lhs", "psi_term", "remainder_term", "slack"]);
        for r in &self.rows {
            t.push_cells(vec![
                r.name.clone(),
                fmt_float(r.lhs),
                fmt_float(self.c * r.principal),
                fmt_float(self.c_n * r.remainder),
                fmt_float(r.slack),
            ]);
        }
        t
    }
}

/// Smallest `Σ_i (C a_i + C_N b_i)/y_i` subject to `y_i ≤ C a_i + C_N b_i`, `C, C_N ≥ 0`,
/// by enumerating the vertices of the feasible region.
pub fn fit_two_constants(y: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let active: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    if active.is_empty() {
        return (0.0, 0.0);
    }
    let feasible = |c: f64, cn: f64| active.iter().all(|&i| y[i] <= (c * a[i] + cn * b[i]) * (1.0 + 1e-12));
    let cost = |c: f64, cn: f64| active.iter().map(|&i| (c * a[i] + cn * b[i]) / y[i]).sum::<f64>();
    let mut candidates = Vec::new();
    let only_c = active
        .iter()
        .map(|&i| if a[i] > 0.0 { y[i] / a[i] } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let only_n = active
        .iter()
        .map(|&i| if b[i] > 0.0 { y[i] / b[i] } else { f64::INFINITY })
        .fold(0.0, f64::max);
    candidates.push((only_c, 0.0));
    candidates.push((0.0, only_n));
    for (u, &i) in active.iter().enumerate() {
        for &j in &active[u + 1..] {
            let det = a[i] * b[j] - a[j] * b[i];
            if det.abs() < 1e-300 {
                continue;
            }
            let c = (y[i] * b[j] - y[j] * b[i]) / det;
            let cn = (a[i] * y[j] - a[j] * y[i]) / det;
            if c >= 0.0 && cn >= 0.0 {
                candidates.push((c, cn));
            }
        }
    }
    candidates
        .into_iter()
        .filter(|&(c, cn)| c.is_finite() && cn.is_finite() && feasible(c, cn))
        .min_by(|p, q| cost(p.0, p.1).total_cmp(&cost(q.0, q.1)))
        .unwrap_or((only_c, only_n))
}

/// Normalized preimages `±S⁻¹(0, 1)` that `ψ` must cover.
pub fn required_directions(flow: &SymplecticMatrix) -> [[f64; 2]; 2] {
    let v = flow.inverse().apply(&PhasePoint::line(0.0, 1.0));
    let u = unit([v.x[0], v.xi[0]]).unwrap_or([0.0, 1.0]);
    [u, [-u[0], -u[1]]]
}

/// Evaluate both sides of `‖F(φUf)‖_p ≤ C‖ψ^w f‖_p + C_N‖⟨x⟩^{-N} f‖_{H^{-N}}`
/// over the corpus and fit the constants.
pub fn micro_restriction_check<'a>(
    u: &dyn LinearOperator,
    flow: &SymplecticMatrix,
    psi: &HomogeneousCutoff,
    cutoff: &SampledFunction,
    corpus: impl IntoIterator<Item = (&'a str, &'a SampledFunction)>,
    p: Exponent,
    order: u32,
) -> Result<MicroReport, MicrolocalError> {
    let grid = *u.grid();
    if grid.dim() != 1 {
        return Err(MicrolocalError::Dimension(grid.dim()));
    }
    let det = det_b(flow);
    if det.abs() < EXCEPTIONAL_GUARD {
        return Err(MicrolocalError::Exceptional { det_b: det });
    }
    for d in required_directions(flow) {
        if !psi.covers(d, COVER_MARGIN) {
            return Err(MicrolocalError::ConeNotCovered { direction: d });
        }
    }
    let psi_op = weyl_quantize(&psi.symbol(), &grid)?;
    let inputs: Vec<(&str, &SampledFunction)> = corpus.into_iter().collect();
    if inputs.is_empty() {
        return Err(MicrolocalError::EmptyCorpus);
    }
    let measured: Vec<(f64, f64, f64)> = par::map_slice(&inputs, |(_, f)| {
        let lhs = lp_norm(&fourier_transform(&u.apply(f).mul(cutoff)), p);
        let principal = lp_norm(&psi_op.apply(f), p);
        (lhs, principal, weighted_negative_sobolev(f, order))
    });
    let y: Vec<f64> = measured.iter().map(|m| m.0).collect();
    let a: Vec<f64> = measured.iter().map(|m| m.1).collect();
    let b: Vec<f64> = measured.iter().map(|m| m.2).collect();
    let (c, c_n) = fit_two_constants(&y, &a, &b);
    let rows = inputs
        .iter()
        .zip(&measured)
        .map(|((name, _), &(lhs, principal, remainder))| MicroRow {
            name: name.to_string(),
            lhs,
            principal,
            remainder,
            slack: if lhs > 0.0 {
                (c * principal + c_n * remainder) / lhs
            } else {
                f64::INFINITY
            },
        })
        .collect();
    Ok(MicroReport {
        p: p.value(),
        order,
        det_b: det,
        c,
        c_n,
        rows,
    })
}

/// Keep only the STFT coefficients of `seed` inside the covered cone beyond
/// `min_radius`, and synthesize.
pub fn cone_supported_witness(
    seed: &SampledFunction,
    window: &Window,
    lattice: &PhaseLattice,
    psi: &HomogeneousCutoff,
    min_radius: f64,
) -> Result<SampledFunction, MicrolocalError> {
    check_line(seed)?;
    let coefficients = stft(seed, window, lattice)?;
    let masked = coefficients.masked(|z| {
        let r = z.x[0].hypot(z.xi[0]);
        r >= min_radius && psi.covers([z.x[0] / r, z.xi[0] / r], COVER_MARGIN)
    });
    Ok(stft_inverse(&masked, window, lattice)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TestCorpus;
    use crate::estimates::Cutoff;
    use crate::phase_space::{phase_shift, Grid};
    use crate::propagator::{HamiltonianSpec, SpectralDecomposition};
    use crate::symplectic_flow::{quadratic_flow, QuadraticHamiltonian};
    use crate::weyl_quant::PhaseSymbol;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::line(16.0, 256).unwrap()
    }

    fn lattice() -> PhaseLattice {
        PhaseLattice::centered(1, 0.5, 8.5, 0.5, 8.5).unwrap()
    }

    fn radii(lo: f64, hi: f64) -> Vec<f64> {
        let n = ((hi - lo) / RADIAL_BIN).round() as usize;
        (0..=n).map(|k| lo + k as f64 * RADIAL_BIN).collect()
    }

    fn gaussian(g: Grid) -> SampledFunction {
        SampledFunction::from_real_fn(g, |x| (-x[0] * x[0] / 2.0).exp())
    }

    fn plateau_chirp(g: Grid, flat: f64, outer: f64) -> SampledFunction {
        let cut = Cutoff::Plateau { flat, outer };
        SampledFunction::from_fn(g, |x| Complex64::from_polar(cut.value(x), x[0] * x[0] / 2.0))
    }

    fn oscillator(g: &Grid, t: f64) -> (crate::propagator::Propagator, SymplecticMatrix) {
        let q = QuadraticHamiltonian::harmonic_oscillator(1);
        let spec = HamiltonianSpec::quadratic_only(q.clone());
        let op = weyl_quantize(&spec.total_symbol(), g).unwrap();
        (SpectralDecomposition::new(&op).unwrap().at(t), quadratic_flow(&q, t))
    }

    #[test]
    fn sector_validation() {
        assert!(ConicSector::new([0.0, 0.0], 0.3, 1.0).is_err());
        assert!(ConicSector::new([1.0, 0.0], PI / 2.0, 1.0).is_err());
        assert!(ConicSector::new([1.0, 0.0], 0.3, 0.5).is_err());
        let s = ConicSector::new([3.0, 4.0], 0.3, 1.0).unwrap();
        assert!((s.direction()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn gaussian_decays_fast_everywhere() {
        let g = grid();
        let w = Window::standard(g);
        let profiles = sector_sweep(&gaussian(g), &w, &lattice(), 8, PI / 8.0, &radii(3.0, 6.0)).unwrap();
        for p in &profiles {
            assert!(p.slope <= -6.0, "{}", p.slope);
        }
    }

    #[test]
    fn shifted_gaussian_has_same_classification() {
        let g = grid();
        let w = Window::standard(g);
        let f = gaussian(g);
        let shifted = phase_shift(&f, &PhasePoint::line(1.0, 0.5));
        let rs = radii(5.0, 8.0);
        let a = sector_sweep(&f, &w, &lattice(), 8, PI / 8.0, &rs).unwrap();
        let b = sector_sweep(&shifted, &w, &lattice(), 8, PI / 8.0, &rs).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!(pa.slope <= -6.0 && pb.slope <= -6.0, "{} {}", pa.slope, pb.slope);
        }
    }

    #[test]
    fn chirp_stft_matches_closed_form() {
        // plateau is flat on |x| ≤ 9, so windows centred in |x| ≤ 4 see a pure chirp
        let g = grid();
        let w = Window::standard(g);
        let f = plateau_chirp(g, 9.0, 12.0);
        let points = [
            (0.0, 0.0),
            (1.0, 1.0),
            (2.5, 2.0),
            (-3.0, -3.5),
            (2.0, -2.0),
            (-1.5, 4.0),
        ];
        let nodes: Vec<f64> = (-8..=8).map(|k| k as f64 * 0.5).collect();
        let lat = PhaseLattice::from_nodes(1, 0.5, nodes.clone(), 0.5, nodes).unwrap();
        let v = stft(&f, &w, &lat).unwrap();
        // ∫ e^{iy²/2} c e^{-(y-x)²/2} e^{-iyξ} dy, c = (2π)^{-1/2} π^{-1/4}
        let c = (2.0 * PI).powf(-0.5) * PI.powf(-0.25);
        for (x, xi) in points {
            let a = Complex64::new(0.5, -0.5);
            let b = Complex64::new(x, -xi);
            let exact = c * (Complex64::new(PI, 0.0) / a).sqrt() * (b * b / (4.0 * a) - x * x / 2.0).exp();
            let idx = lat.locate(&PhasePoint::line(x, xi), 1e-9).unwrap();
            assert!((v.values()[idx] - exact).norm() < 1e-8, "{x} {xi}");
        }
    }

    #[test]
    fn chirp_slow_along_its_graph() {
        let g = grid();
        let w = Window::standard(g);
        let f = plateau_chirp(g, 7.0, 10.0);
        let rs = radii(SLOPE_WINDOW.0, SLOPE_WINDOW.1);
        let diag = ConicSector::new([1.0, 1.0], PI / 8.0, 1.0).unwrap();
        let anti = ConicSector::new([1.0, -1.0], PI / 8.0, 1.0).unwrap();
        let slow = cone_decay(&f, &w, &lattice(), &diag, &rs).unwrap();
        let fast = cone_decay(&f, &w, &lattice(), &anti, &rs).unwrap();
        assert!(slow.slope >= -1.0, "{}", slow.slope);
        assert!(fast.slope <= -4.0, "{}", fast.slope);
        let dirs = slow_directions(&f, &w, &lattice(), 32, &rs).unwrap();
        assert_eq!(dirs.len(), 2);
        let target = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        let anti_target = [-target[0], -target[1]];
        for d in dirs {
            let e = angular_distance(d, target).min(angular_distance(d, anti_target));
            assert!(e <= 2.0 * RADIAL_BIN / SLOPE_WINDOW.1, "{d:?}");
        }
        let csv = profiles_csv(&[slow, fast]).render();
        assert!(csv.starts_with("r,sup,sector\n"));
    }

    #[test]
    fn empty_and_oversized_radii_rejected() {
        let g = grid();
        let w = Window::standard(g);
        let s = ConicSector::from_angle(0.25, 0.01, 1.0).unwrap();
        assert!(matches!(
            cone_decay(&gaussian(g), &w, &lattice(), &s, &[3.1]),
            Err(MicrolocalError::EmptySector { .. })
        ));
        let wide = ConicSector::new([1.0, 0.0], 0.3, 1.0).unwrap();
        assert!(matches!(
            cone_decay(&gaussian(g), &w, &lattice(), &wide, &[12.0]),
            Err(MicrolocalError::Radii { .. })
        ));
    }

    #[test]
    fn cutoff_examples() {
        let quarters: Vec<ConicSector> = (0..4)
            .map(|k| ConicSector::from_angle(k as f64 * PI / 2.0, PI / 4.0 + 0.01, 1.0).unwrap())
            .collect();
        let full = build_cutoff(&quarters, 0.5).unwrap();
        assert!(full.is_full());
        let empty = build_cutoff(&[], 0.5).unwrap();
        assert!(!empty.is_full());
        for k in 0..50 {
            let a = k as f64 * 0.37;
            for r in [1.5, 2.0, 10.0] {
                assert_eq!(full.value(r * a.cos(), r * a.sin()), 1.0);
                assert_eq!(empty.value(r * a.cos(), r * a.sin()), 0.0);
            }
        }
        let h = ConicSector::half_space([0.3, 0.8], 0.4).unwrap();
        let psi = build_cutoff_with(&[h], 0.5, 0.4).unwrap();
        for k in 0..100 {
            let a = k as f64 * 0.0628;
            let (x, xi) = (2.0 * a.cos(), 2.0 * a.sin());
            assert!((psi.value(x, xi) + psi.value(-x, -xi) - 1.0).abs() < 1e-14);
        }
        assert!(build_cutoff(&[], 0.0).is_err());
    }

    #[test]
    fn cutoff_is_homogeneous_and_one_on_cone() {
        let s = ConicSector::from_angle(0.7, 0.4, 1.0).unwrap();
        let psi = build_cutoff(&[s], 0.5).unwrap();
        for k in 0..64 {
            let a = k as f64 * 2.0 * PI / 64.0;
            let base = psi.value(1.5 * a.cos(), 1.5 * a.sin());
            for lam in [1.0, 2.0, 7.5] {
                let v = psi.value(1.5 * lam * a.cos(), 1.5 * lam * a.sin());
                assert!((v - base).abs() <= 1e-8);
                assert!((0.0..=1.0).contains(&v));
            }
            if angular_distance([a.cos(), a.sin()], s.direction()) <= 0.4 {
                assert_eq!(base, 1.0);
            }
        }
    }

    #[test]
    fn microlocal_inequality_and_witness() {
        let g = Grid::line(12.0, 256).unwrap();
        let (u, flow) = oscillator(&g, 1.0);
        let [v, _] = required_directions(&flow);
        let sectors = [
            ConicSector::new(v, PI / 6.0, 1.0).unwrap(),
            ConicSector::new([-v[0], -v[1]], PI / 6.0, 1.0).unwrap(),
        ];
        let psi = build_cutoff(&sectors, 0.5).unwrap();
        let phi = Cutoff::Gaussian { radius: 2.0 }.sample(&g);
        let corpus = TestCorpus::standard(g, 5);
        let members: Vec<(&str, &SampledFunction)> = corpus
            .members()
            .iter()
            .map(|m| (m.name.as_str(), &m.function))
            .collect();
        let report = micro_restriction_check(&u, &flow, &psi, &phi, members, Exponent::ONE, 2).unwrap();
        assert!(report.holds(1e-9));
        assert!(report.rows.iter().all(|r| r.slack >= 1.0 - 1e-9));

        let w = Window::standard(g);
        let lat = PhaseLattice::centered(1, 0.5, 11.0, 0.5, 11.0).unwrap();
        let centre = PhasePoint::line(8.0 * v[0], 8.0 * v[1]);
        let seed = phase_shift(&gaussian(g), &centre);
        let witness = cone_supported_witness(&seed, &w, &lat, &psi, 4.0).unwrap();
        let psi_op = weyl_quantize(&psi.symbol(), &g).unwrap();
        let (first, second) = report.terms(
            lp_norm(&psi_op.apply(&witness), Exponent::ONE),
            weighted_negative_sobolev(&witness, 2),
        );
        assert!(second <= 0.01 * first, "{first} {second}");

        let zero = SampledFunction::zeros(g);
        let r0 = micro_restriction_check(&u, &flow, &psi, &phi, [("zero", &zero)], Exponent::ONE, 2).unwrap();
        assert_eq!(
            (r0.rows[0].lhs, r0.rows[0].principal, r0.rows[0].remainder),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn trivial_cutoff_reduces_to_restriction() {
        let g = Grid::line(12.0, 256).unwrap();
        let (u, flow) = oscillator(&g, 1.0);
        let quarters: Vec<ConicSector> = (0..4)
            .map(|k| ConicSector::from_angle(k as f64 * PI / 2.0, PI / 4.0 + 0.01, 1.0).unwrap())
            .collect();
        let psi = build_cutoff(&quarters, 0.5).unwrap();
        let phi = Cutoff::Gaussian { radius: 2.0 }.sample(&g);
        let corpus = TestCorpus::standard(g, 5);
        let members: Vec<(&str, &SampledFunction)> = corpus
            .members()
            .iter()
            .map(|m| (m.name.as_str(), &m.function))
            .collect();
        let report = micro_restriction_check(&u, &flow, &psi, &phi, members, Exponent::ONE, 2).unwrap();
        let max_ratio = corpus
            .functions()
            .map(|f| {
                crate::estimates::restriction_ratio(&u, f, &phi, Exponent::ONE)
                    .unwrap()
                    .ratio
            })
            .fold(0.0, f64::max);
        assert!(
            report.c <= max_ratio * (1.0 + 1e-9) && report.c >= max_ratio / 2.0,
            "{} {}",
            report.c,
            max_ratio
        );
    }

    #[test]
    fn rejects_exceptional_and_uncovered() {
        let g = Grid::line(8.0, 64).unwrap();
        let (u, _) = oscillator(&g, 1.0);
        let phi = Cutoff::One.sample(&g);
        let f = gaussian(g);
        let q = QuadraticHamiltonian::harmonic_oscillator(1);
        let psi_any = build_cutoff(&[ConicSector::from_angle(0.0, 0.3, 1.0).unwrap()], 0.5).unwrap();
        let err = micro_restriction_check(
            &u,
            &quadratic_flow(&q, PI),
            &psi_any,
            &phi,
            [("g", &f)],
            Exponent::ONE,
            2,
        );
        assert!(matches!(err, Err(MicrolocalError::Exceptional { .. })));
        let flow = quadratic_flow(&q, 1.0);
        let err = micro_restriction_check(&u, &flow, &psi_any, &phi, [("g", &f)], Exponent::ONE, 2);
        assert!(matches!(err, Err(MicrolocalError::ConeNotCovered { .. })));
    }

    #[test]
    fn lp_vertex_fit() {
        let y = [1.0, 1.0];
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(fit_two_constants(&y, &a, &b), (1.0, 1.0));
        let (c, cn) = fit_two_constants(&[2.0, 1.0], &[1.0, 1.0], &[1.0, 0.1]);
        assert!(c * 1.0 + cn * 1.0 >= 2.0 - 1e-12 && c + 0.1 * cn >= 1.0 - 1e-12);
        assert_eq!(fit_two_constants(&[0.0], &[1.0], &[1.0]), (0.0, 0.0));
    }

    #[test]
    fn negative_sobolev_reduces_to_l2() {
        let g = grid();
        let f = gaussian(g);
        assert!((weighted_negative_sobolev(&f, 0) - f.norm()).abs() < 1e-10 * f.norm());
        assert!(weighted_negative_sobolev(&f, 2) < weighted_negative_sobolev(&f, 0));
    }

    #[test]
    fn microlocality_of_smooth_symbols() {
        // multiplying by a smooth tame symbol does not create slow directions
        let g = grid();
        let w = Window::standard(g);
        let rs = radii(SLOPE_WINDOW.0, SLOPE_WINDOW.1);
        let f = plateau_chirp(g, 7.0, 10.0);
        let symbols = [
            PhaseSymbol::new(1, SymbolClass::SmoothTame, true, "1+0.3cos", |x, _| {
                Complex64::new(1.0 + 0.3 * x[0].cos(), 0.0)
            }),
            PhaseSymbol::new(1, SymbolClass::SmoothTame, true, "2+sin(ξ/2)", |_, k| {
                Complex64::new(2.0 + (k[0] / 2.0).sin(), 0.0)
            }),
        ];
        let before = sector_sweep(&f, &w, &lattice(), 8, PI / 8.0, &rs).unwrap();
        for a in symbols {
            let af = weyl_quantize(&a, &g).unwrap().apply(&f);
            let after = sector_sweep(&af, &w, &lattice(), 8, PI / 8.0, &rs).unwrap();
            for (b, c) in before.iter().zip(&after) {
                if !b.is_slow() {
                    assert!(!c.is_slow(), "{} -> {}", b.slope, c.slope);
                } else {
                    assert!(c.slope <= b.slope + 0.5, "{} -> {}", b.slope, c.slope);
                }
            }
        }
    }

    #[test]
    fn slow_directions_follow_the_flow() {
        let g = grid();
        let w = Window::standard(g);
        let rs = radii(SLOPE_WINDOW.0, SLOPE_WINDOW.1);
        let f = plateau_chirp(g, 7.0, 10.0);
        let tol = 2.0 * RADIAL_BIN / SLOPE_WINDOW.1;
        for t in [0.3, 0.6] {
            let (u, flow) = oscillator(&g, t);
            let before = slow_directions(&f, &w, &lattice(), 32, &rs).unwrap();
            let images: Vec<[f64; 2]> = before
                .iter()
                .map(|d| {
                    let z = flow.apply(&PhasePoint::line(d[0], d[1]));
                    [z.x[0], z.xi[0]]
                })
                .collect();
            let after = slow_directions(&u.apply(&f), &w, &lattice(), 32, &rs).unwrap();
            assert!(!after.is_empty());
            for d in after {
                let e = images
                    .iter()
                    .map(|i| angular_distance(d, *i))
                    .fold(f64::INFINITY, f64::min);
                assert!(e <= tol, "t = {t}: {d:?} vs {images:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_cutoff_bounds_and_homogeneity(theta in 0.0f64..std::f64::consts::TAU, alpha in 0.1f64..1.5, a in 0.0f64..std::f64::consts::TAU, lam in 1.0f64..20.0) {
            let s = ConicSector::from_angle(theta, alpha, 1.0).unwrap();
            let psi = build_cutoff(&[s], 0.3).unwrap();
            let z = [1.3 * a.cos(), 1.3 * a.sin()];
            let v = psi.value(z[0], z[1]);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((psi.value(lam * z[0], lam * z[1]) - v).abs() <= 1e-8);
        }
    }
}

//! TOML experiment configuration. Every table rejects unknown keys.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LabError;
use crate::phase_space::{Grid, PhaseLattice};
use crate::propagator::HamiltonianSpec;
use crate::symplectic_flow::{QuadraticHamiltonian, SmoothTerm};
use crate::weyl_quant::{Atom, AtomicMeasure};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Selftest,
    Flow,
    Weyl,
    Almostdiag,
    Dispersive,
    Restriction,
    Blowup,
    Dyson,
    Microlocal,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Selftest,
        ExperimentKind::Flow,
        ExperimentKind::Weyl,
        ExperimentKind::Almostdiag,
        ExperimentKind::Dispersive,
        ExperimentKind::Restriction,
        ExperimentKind::Blowup,
        ExperimentKind::Dyson,
        ExperimentKind::Microlocal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Selftest => "selftest",
            ExperimentKind::Flow => "flow",
            ExperimentKind::Weyl => "weyl",
            ExperimentKind::Almostdiag => "almostdiag",
            ExperimentKind::Dispersive => "dispersive",
            ExperimentKind::Restriction => "restriction",
            ExperimentKind::Blowup => "blowup",
            ExperimentKind::Dyson => "dyson",
            ExperimentKind::Microlocal => "microlocal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_extent: f64,
    pub points: usize,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

impl GridConfig {
    pub const fn line(half_extent: f64, points: usize) -> Self {
        Self {
            half_extent,
            points,
            dim: 1,
        }
    }

    pub fn build(&self) -> Result<Grid, LabError> {
        Grid::new(self.dim, self.half_extent, self.points).map_err(|e| LabError::Config(format!("grid: {e}")))
    }
}

/// Lattice steps; the node box defaults to the largest one the grid supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub step_x: f64,
    pub step_xi: f64,
    pub x_radius: Option<f64>,
    pub xi_radius: Option<f64>,
}

impl LatticeConfig {
    pub const fn steps(step_x: f64, step_xi: f64) -> Self {
        Self {
            step_x,
            step_xi,
            x_radius: None,
            xi_radius: None,
        }
    }

    pub const fn boxed(step: f64, x_radius: f64, xi_radius: f64) -> Self {
        Self {
            step_x: step,
            step_xi: step,
            x_radius: Some(x_radius),
            xi_radius: Some(xi_radius),
        }
    }

    pub fn build(&self, grid: &Grid) -> Result<PhaseLattice, LabError> {
        let lat = match (self.x_radius, self.xi_radius) {
            (None, None) => PhaseLattice::covering(grid, self.step_x, self.step_xi),
            (x, xi) => {
                let full = PhaseLattice::covering(grid, self.step_x, self.step_xi)
                    .map_err(|e| LabError::Config(format!("lattice: {e}")))?;
                let reach = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
                PhaseLattice::centered(
                    grid.dim(),
                    self.step_x,
                    x.unwrap_or(reach(full.x_nodes())),
                    self.step_xi,
                    xi.unwrap_or(reach(full.xi_nodes())),
                )
            }
        }
        .map_err(|e| LabError::Config(format!("lattice: {e}")))?;
        lat.check_within(grid)
            .map_err(|e| LabError::Config(format!("lattice: {e}")))?;
        Ok(lat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticKind {
    FreeParticle,
    HarmonicOscillator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub position: Vec<f64>,
    pub weight: f64,
    #[serde(default)]
    pub weight_im: f64,
}

/// `a₂ + a₁ + a₀`: a quadratic part (named or as a `2d × 2d` matrix), smooth
/// bounded terms, and a potential given by the atoms of its Fourier measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub quadratic: Option<QuadraticKind>,
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub smooth: Vec<SmoothTerm>,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
}

impl HamiltonianConfig {
    pub fn named(kind: QuadraticKind) -> Self {
        Self {
            dim: 1,
            quadratic: Some(kind),
            matrix: None,
            smooth: Vec::new(),
            atoms: Vec::new(),
        }
    }

    pub fn with_smooth(mut self, term: SmoothTerm) -> Self {
        self.smooth.push(term);
        self
    }

    /// Adds `A cos(k x)` as two atoms at `±k`.
    pub fn with_cosine_potential(mut self, amplitude: f64, frequency: f64) -> Self {
        for s in [1.0, -1.0] {
            self.atoms.push(AtomConfig {
                position: vec![s * frequency],
                weight: amplitude / 2.0,
                weight_im: 0.0,
            });
        }
        self
    }

    pub fn build(&self) -> Result<HamiltonianSpec, LabError> {
        let bad = |e: String| LabError::Config(format!("hamiltonian: {e}"));
        let quadratic = match (&self.quadratic, &self.matrix) {
            (Some(_), Some(_)) => return Err(bad("give either `quadratic` or `matrix`, not both".into())),
            (Some(QuadraticKind::FreeParticle), None) => Some(QuadraticHamiltonian::free_particle(self.dim)),
            (Some(QuadraticKind::HarmonicOscillator), None) => {
                Some(QuadraticHamiltonian::harmonic_oscillator(self.dim))
            }
            (None, Some(rows)) => {
                let n = rows.len();
                if n != 2 * self.dim || rows.iter().any(|r| r.len() != n) {
                    return Err(bad(format!("matrix must be {0}×{0}", 2 * self.dim)));
                }
                let m = ndarray::Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);
                Some(QuadraticHamiltonian::new(m).map_err(|e| bad(e.to_string()))?)
            }
            (None, None) => None,
        };
        let potential = if self.atoms.is_empty() {
            None
        } else {
            let atoms = self
                .atoms
                .iter()
                .map(|a| Atom {
                    position: a.position.clone(),
                    weight: Complex64::new(a.weight, a.weight_im),
                })
                .collect();
            Some(AtomicMeasure::new(self.dim, atoms).map_err(|e| bad(e.to_string()))?)
        };
        HamiltonianSpec::new(self.dim, quadratic, self.smooth.clone(), potential).map_err(|e| bad(e.to_string()))
    }

    pub fn is_free_particle(&self) -> bool {
        self.quadratic == Some(QuadraticKind::FreeParticle) && self.smooth.is_empty() && self.atoms.is_empty()
    }
}

/// `metric` must lie in `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub metric: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Settings of one built-in case of a scan experiment. Unset fields fall back
/// to the top-level value, then to the case default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub skip: Option<bool>,
    pub grid: Option<GridConfig>,
    pub lattice: Option<LatticeConfig>,
    pub window_width: Option<f64>,
    pub times: Option<Vec<f64>>,
    pub bump_widths: Option<Vec<f64>>,
    pub backward: Option<bool>,
    pub p: Option<Vec<f64>>,
    pub q: Option<f64>,
    pub cutoff_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub free: CaseConfig,
    #[serde(default)]
    pub oscillator: CaseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestConfig {
    pub default_step: f64,
    pub refined_step: f64,
    pub random: usize,
    pub unitarity_times: Vec<f64>,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            default_step: 0.5,
            refined_step: 0.25,
            random: 12,
            unitarity_times: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub sample_radius: f64,
    pub samples_per_axis: usize,
    pub steps: usize,
    pub fd_step: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            sample_radius: 3.0,
            samples_per_axis: 5,
            steps: 400,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeylConfig {
    pub eigenvalues: usize,
}

impl Default for WeylConfig {
    fn default() -> Self {
        Self { eigenvalues: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DysonConfig {
    /// Grid for the Dyson expansion and its oracle.
    pub dyson_grid: GridConfig,
    /// Grid for the kernel and split-step comparisons.
    pub oracle_grid: GridConfig,
    pub random: usize,
    /// Expansion order per entry of `times`.
    pub orders: Vec<usize>,
    pub quad_steps: Vec<usize>,
    pub split_steps: usize,
    pub factorial_time: f64,
    pub factorial_orders: usize,
    pub factorial_quad_steps: usize,
}

impl Default for DysonConfig {
    fn default() -> Self {
        Self {
            dyson_grid: GridConfig::line(10.0, 128),
            oracle_grid: GridConfig::line(24.0, 512),
            random: 2,
            orders: vec![6, 9],
            quad_steps: vec![128, 256],
            split_steps: 400,
            factorial_time: 1.0,
            factorial_orders: 5,
            factorial_quad_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlmostdiagConfig {
    pub time: f64,
    pub z_radius: f64,
    pub z_step: f64,
    pub flow_steps: usize,
    pub fit_min: f64,
    pub fit_max: f64,
    pub stability_times: Vec<f64>,
}

impl Default for AlmostdiagConfig {
    fn default() -> Self {
        Self {
            time: 1.0,
            z_radius: 3.0,
            z_step: 0.5,
            flow_steps: 200,
            fit_min: 2.0,
            fit_max: 8.0,
            stability_times: (0..9).map(|k| -1.0 + 0.25 * k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestrictionConfig {
    pub time: f64,
    pub radius: f64,
    pub points: usize,
    pub p: f64,
    pub q: f64,
    pub random: usize,
    pub flattened_p: f64,
    pub flattened_widths: Vec<f64>,
}

impl Default for RestrictionConfig {
    fn default() -> Self {
        Self {
            time: 1.0,
            radius: 2.0,
            points: 256,
            p: 1.2,
            q: 2.0,
            random: 12,
            flattened_p: 1.9,
            flattened_widths: vec![1.0, 1.5, 2.0, 2.5, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicrolocalConfig {
    pub time: f64,
    pub p: f64,
    pub order: u32,
    pub half_angle: f64,
    pub epsilon: f64,
    pub cutoff_radius: f64,
    pub random: usize,
    pub witness_centre: f64,
    pub witness_min_radius: f64,
}

impl Default for MicrolocalConfig {
    fn default() -> Self {
        Self {
            time: 1.0,
            p: 1.0,
            order: 2,
            half_angle: PI / 6.0,
            epsilon: 0.5,
            cutoff_radius: 2.0,
            random: 12,
            witness_centre: 8.0,
            witness_min_radius: 4.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub times: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub q: Option<f64>,
    pub window_width: Option<f64>,
    pub grid: Option<GridConfig>,
    pub lattice: Option<LatticeConfig>,
    pub hamiltonian: Option<HamiltonianConfig>,
    #[serde(default)]
    pub selftest: SelftestConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub weyl: WeylConfig,
    #[serde(default)]
    pub dyson: DysonConfig,
    #[serde(default)]
    pub almostdiag: AlmostdiagConfig,
    #[serde(default)]
    pub dispersive: ScanConfig,
    #[serde(default)]
    pub blowup: ScanConfig,
    #[serde(default)]
    pub restriction: RestrictionConfig,
    #[serde(default)]
    pub microlocal: MicrolocalConfig,
    #[serde(default, rename = "assert")]
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssertFile {
    #[serde(default, rename = "assert")]
    assertions: Vec<Assertion>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_assertions(path: &Path) -> Result<Vec<Assertion>, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: AssertFile =
            toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Ok(file.assertions)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// SHA-256 of the canonical TOML rendering, output location excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        let text = toml::to_string(&canonical).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A scan case with every setting resolved.
#[derive(Debug, Clone)]
pub struct ResolvedCase {
    pub name: String,
    pub spec: HamiltonianSpec,
    pub grid: Grid,
    pub lattice: PhaseLattice,
    pub window_width: f64,
    pub times: Vec<f64>,
    pub bump_widths: Vec<f64>,
    pub backward: bool,
    pub p: Vec<f64>,
    pub q: f64,
    pub cutoff_radius: f64,
}

/// Built-in defaults of a scan case.
pub struct CaseDefaults {
    pub hamiltonian: HamiltonianConfig,
    pub grid: GridConfig,
    pub lattice: LatticeConfig,
    pub window_width: f64,
    pub times: Vec<f64>,
    pub bump_widths: Vec<f64>,
    pub p: Vec<f64>,
    pub q: f64,
    pub cutoff_radius: f64,
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

impl ExperimentConfig {
    /// Cases of a scan: the two built-ins, or a single `custom` case when a
    /// top-level Hamiltonian is given (seeded from the matching built-in).
    pub fn resolve_cases(
        &self,
        section: &ScanConfig,
        free: CaseDefaults,
        oscillator: CaseDefaults,
    ) -> Result<Vec<ResolvedCase>, LabError> {
        let mut plan: Vec<(String, &CaseConfig, CaseDefaults)> = Vec::new();
        match &self.hamiltonian {
            Some(h) => {
                let (case, mut base) = if h.is_free_particle() {
                    (&section.free, free)
                } else {
                    (&section.oscillator, oscillator)
                };
                base.hamiltonian = h.clone();
                plan.push(("custom".into(), case, base));
            }
            None => {
                plan.push(("free".into(), &section.free, free));
                plan.push(("oscillator".into(), &section.oscillator, oscillator));
            }
        }
        let mut out = Vec::new();
        for (name, case, d) in plan {
            if case.skip == Some(true) {
                continue;
            }
            let grid = case.grid.or(self.grid).unwrap_or(d.grid).build()?;
            let lattice = case.lattice.or(self.lattice).unwrap_or(d.lattice).build(&grid)?;
            let p = case.p.clone().or_else(|| self.p.clone()).unwrap_or(d.p);
            if p.iter().any(|v| !(*v >= 1.0)) {
                return Err(LabError::Config(format!("{name}: exponents must be ≥ 1, got {p:?}")));
            }
            out.push(ResolvedCase {
                spec: d.hamiltonian.build()?,
                grid,
                lattice,
                window_width: case.window_width.or(self.window_width).unwrap_or(d.window_width),
                times: case.times.clone().or_else(|| self.times.clone()).unwrap_or(d.times),
                bump_widths: case.bump_widths.clone().unwrap_or(d.bump_widths),
                backward: case.backward.unwrap_or(true),
                p,
                q: case.q.or(self.q).unwrap_or(d.q),
                cutoff_radius: case.cutoff_radius.unwrap_or(d.cutoff_radius),
                name,
            });
        }
        Ok(out)
    }
}

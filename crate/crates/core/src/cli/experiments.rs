//! The nine experiments. Each returns named metrics and CSV tables; nothing
//! here touches the filesystem except through the propagator cache.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use num_complex::Complex64;

use super::config::{
    linspace, CaseDefaults, ExperimentConfig, ExperimentKind, GridConfig, HamiltonianConfig, LatticeConfig,
    QuadraticKind, ResolvedCase,
};
use super::LabError;
use crate::almost_diag::{default_envelope, disk_points, fit_polynomial_decay_range, gabor_matrix};
use crate::corpus::TestCorpus;
use crate::estimates::{
    blowup_scan, measure_restriction_ratio, restriction_ratio, Cutoff, EstimateReport, ProbeSet, PropagatorFamily,
    RestrictionMeasure, ScanEstimator,
};
use crate::microlocal::{
    build_cutoff, cone_supported_witness, micro_restriction_check, required_directions, weighted_negative_sobolev,
    ConicSector,
};
use crate::par;
use crate::phase_space::io::{fmt_float, CsvTable};
use crate::phase_space::{
    lp_norm, phase_shift, stft, stft_inverse, Exponent, Grid, PhaseLattice, PhasePoint, SampledFunction, Window,
};
use crate::propagator::{
    free_propagator, quadratic_kernel_propagator, reference_propagator, split_step_for_spec, DysonExpansion,
    HamiltonianSpec, Propagator, PropagatorCache, SpectralDecomposition,
};
use crate::symplectic_flow::{
    finite_difference_jacobian, hamiltonian_flow, quadratic_flow, square_samples, QuadraticHamiltonian, SmoothTerm,
    SymplecticMatrix,
};
use crate::weyl_quant::{
    ft_measure_potential, sjostrand_norm_estimate, two_norm, weyl_quantize, AtomicMeasure, LinearOperator, PhaseSymbol,
    SymbolClass, SymbolLattice,
};

#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub cache: Option<PathBuf>,
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub metrics: BTreeMap<String, f64>,
    /// `(file stem, table)` in emission order.
    pub tables: Vec<(String, CsvTable)>,
    pub notes: BTreeMap<String, String>,
}

impl Outcome {
    fn metric(&mut self, name: impl Into<String>, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    fn table(&mut self, name: impl Into<String>, t: CsvTable) {
        self.tables.push((name.into(), t));
    }

    fn note(&mut self, name: impl Into<String>, v: impl Into<String>) {
        self.notes.insert(name.into(), v.into());
    }
}

pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Outcome, LabError> {
    match kind {
        ExperimentKind::Selftest => selftest(cfg),
        ExperimentKind::Flow => flow(cfg),
        ExperimentKind::Weyl => weyl(cfg),
        ExperimentKind::Dyson => dyson(cfg),
        ExperimentKind::Almostdiag => almostdiag(cfg),
        ExperimentKind::Dispersive => dispersive(cfg, ctx),
        ExperimentKind::Blowup => blowup(cfg, ctx),
        ExperimentKind::Restriction => restriction(cfg),
        ExperimentKind::Microlocal => microlocal(cfg, ctx),
    }
}

fn cosine_atoms(amplitude: f64) -> AtomicMeasure {
    let half = Complex64::new(amplitude / 2.0, 0.0);
    AtomicMeasure::line(&[(1.0, half), (-1.0, half)])
}

fn oscillator_sin() -> HamiltonianConfig {
    HamiltonianConfig::named(QuadraticKind::HarmonicOscillator).with_smooth(SmoothTerm::SinX {
        amplitude: 1.0,
        frequency: 1.0,
    })
}

fn line_grid(cfg: &ExperimentConfig, default: GridConfig) -> Result<Grid, LabError> {
    let g = cfg.grid.unwrap_or(default).build()?;
    if g.dim() != 1 {
        return Err(LabError::Config(format!(
            "this experiment needs a d = 1 grid, got d = {}",
            g.dim()
        )));
    }
    Ok(g)
}

fn window(cfg: &ExperimentConfig, grid: Grid) -> Result<Window, LabError> {
    let w = cfg.window_width.unwrap_or(1.0);
    if !(w > 0.0) {
        return Err(LabError::Config(format!("window_width must be positive, got {w}")));
    }
    Ok(Window::gaussian(grid, w))
}

fn family(spec: &HamiltonianSpec, grid: &Grid, ctx: &RunContext) -> Result<PropagatorFamily, LabError> {
    let cache = match &ctx.cache {
        None => None,
        Some(dir) => Some(PropagatorCache::new(dir).map_err(|e| LabError::io(dir, e))?),
    };
    Ok(PropagatorFamily::with_cache(spec, grid, cache))
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn min_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::INFINITY, f64::min)
}

/// `max_f ‖Af − Bf‖/‖Bf‖` over a corpus.
fn corpus_error(a: &dyn LinearOperator, b: &dyn LinearOperator, corpus: &TestCorpus) -> f64 {
    let members = corpus.members();
    max_of(par::map_slice(members, |m| {
        a.apply(&m.function).relative_error(&b.apply(&m.function))
    }))
}

fn operator_error(a: &Propagator, b: &Propagator) -> Result<f64, LabError> {
    Ok(two_norm(&(a.to_dense()? - b.to_dense()?)))
}

fn exponent(p: f64) -> Result<Exponent, LabError> {
    Exponent::new(p).map_err(|e| LabError::Config(e.to_string()))
}

/// `p1`, `p1_2`, `pinf`: metric-safe exponent tags.
fn exponent_tag(p: f64) -> String {
    if p.is_infinite() {
        "pinf".into()
    } else {
        format!("p{p}").replace('.', "_")
    }
}

fn selftest(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let sc = &cfg.selftest;
    let grid = line_grid(cfg, GridConfig::line(12.0, 256))?;
    let g = window(cfg, grid)?;
    let corpus = TestCorpus::with_random(grid, cfg.seed(), sc.random);
    let mut out = Outcome::default();
    let mut table = CsvTable::new(["member", "step", "isometry", "reconstruction"]);
    let mut per_step = Vec::new();
    for step in [sc.default_step, sc.refined_step] {
        let lat = PhaseLattice::covering(&grid, step, step)
            .map_err(|e| LabError::Config(format!("selftest lattice: {e}")))?;
        let rows = par::map_slice(corpus.members(), |m| -> Result<(f64, f64), LabError> {
            let v = stft(&m.function, &g, &lat)?;
            let n = m.function.norm();
            let iso = (v.l2_norm() - n).abs() / n;
            let rec = stft_inverse(&v, &g, &lat)?.relative_error(&m.function);
            Ok((iso, rec))
        });
        let (mut iso_max, mut rec_max) = (0.0f64, 0.0f64);
        for (m, r) in corpus.members().iter().zip(rows) {
            let (iso, rec) = r?;
            table.push_cells(vec![m.name.clone(), fmt_float(step), fmt_float(iso), fmt_float(rec)]);
            iso_max = iso_max.max(iso);
            rec_max = rec_max.max(rec);
        }
        per_step.push((iso_max, rec_max));
    }
    let [(iso, rec), (iso_f, rec_f)] = [per_step[0], per_step[1]];
    out.metric("stft.isometry_max", iso);
    out.metric("stft.reconstruction_max", rec);
    out.metric("stft.isometry_max_refined", iso_f);
    out.metric("stft.reconstruction_max_refined", rec_f);
    out.metric("stft.isometry_refinement_ratio", iso_f / iso);
    out.metric("stft.reconstruction_refinement_ratio", rec_f / rec);
    out.table("stft", table);

    let spec = match &cfg.hamiltonian {
        Some(h) => h.build()?,
        None => oscillator_sin().build()?,
    };
    let spectral = SpectralDecomposition::new(&weyl_quantize(&spec.total_symbol(), &grid)?)?;
    let mut unitarity = CsvTable::new(["propagator", "t", "defect"]);
    let mut worst = 0.0f64;
    for &t in &sc.unitarity_times {
        for (name, u) in [("spectral", spectral.at(t)), ("free", free_propagator(t, &grid))] {
            let d = u.unitarity_defect(corpus.functions());
            worst = worst.max(d);
            unitarity.push_cells(vec![name.into(), fmt_float(t), fmt_float(d)]);
        }
    }
    out.metric("unitarity.max_defect", worst);
    out.table("unitarity", unitarity);
    Ok(out)
}

fn flow(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let fc = &cfg.flow;
    let mut out = Outcome::default();
    let times = cfg
        .times
        .clone()
        .unwrap_or_else(|| vec![-3.0, -1.0, 0.5, 1.0, 2.0, 5.0]);

    let skew = QuadraticHamiltonian::new(ndarray::arr2(&[[1.0, 0.3], [0.3, 0.5]]))?;
    let quadratics = [
        ("free", QuadraticHamiltonian::free_particle(1)),
        ("oscillator", QuadraticHamiltonian::harmonic_oscillator(1)),
        ("coupled", skew),
        ("oscillator_2d", QuadraticHamiltonian::harmonic_oscillator(2)),
    ];
    let mut qt = CsvTable::new(["hamiltonian", "t", "detB", "symplectic_defect"]);
    let mut q_worst = 0.0f64;
    for (name, q) in &quadratics {
        for &t in &times {
            let s = quadratic_flow(q, t);
            let d = s.symplectic_defect();
            q_worst = q_worst.max(d);
            qt.push_cells(vec![
                name.to_string(),
                fmt_float(t),
                fmt_float(crate::symplectic_flow::det_b(&s)),
                fmt_float(d),
            ]);
        }
    }
    out.metric("quadratic.symplectic_defect_max", q_worst);
    out.table("quadratic_flows", qt);

    let tame: Vec<(String, HamiltonianSpec)> = match &cfg.hamiltonian {
        Some(h) => vec![("custom".into(), h.build()?)],
        None => vec![
            ("oscillator_sin".into(), oscillator_sin().build()?),
            (
                "free_sinsin".into(),
                HamiltonianConfig::named(QuadraticKind::FreeParticle)
                    .with_smooth(SmoothTerm::SinXSinXi { amplitude: 0.5 })
                    .build()?,
            ),
        ],
    };
    let tame_times = cfg.times.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
    let points = square_samples(fc.sample_radius, fc.samples_per_axis);
    let mut tt = CsvTable::new([
        "hamiltonian",
        "t",
        "x",
        "xi",
        "x_t",
        "xi_t",
        "symplectic_defect",
        "fd_error",
    ]);
    let (mut defect_max, mut fd_max) = (0.0f64, 0.0f64);
    for (name, spec) in &tame {
        if spec.dim() != 1 {
            return Err(LabError::Config("flow: tame Hamiltonians are d = 1".into()));
        }
        let h = spec.principal_hamiltonian()?;
        for &t in &tame_times {
            let rows = par::map_slice(&points, |z| -> Result<_, LabError> {
                let r = hamiltonian_flow(&h, 0.0, t, z, fc.steps)?;
                let fd = finite_difference_jacobian(&h, 0.0, t, z, fc.steps, fc.fd_step)?;
                let err = (&r.jacobian - &fd).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                Ok((r, err))
            });
            for (z, row) in points.iter().zip(rows) {
                let (r, err) = row?;
                defect_max = defect_max.max(r.diagnostics.symplectic_defect);
                fd_max = fd_max.max(err);
                tt.push_cells(
                    std::iter::once(name.clone())
                        .chain(
                            [
                                t,
                                z.x[0],
                                z.xi[0],
                                r.endpoint.x[0],
                                r.endpoint.xi[0],
                                r.diagnostics.symplectic_defect,
                                err,
                            ]
                            .iter()
                            .map(|v| fmt_float(*v)),
                        )
                        .collect(),
                );
            }
        }
    }
    out.metric("tame.symplectic_defect_max", defect_max);
    out.metric("tame.jacobian_fd_error_max", fd_max);
    out.table("tame_flows", tt);
    Ok(out)
}

fn weyl(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let grid = line_grid(cfg, GridConfig::line(12.0, 256))?;
    let mut out = Outcome::default();

    let ho = HamiltonianSpec::quadratic_only(QuadraticHamiltonian::harmonic_oscillator(1));
    let spectral = SpectralDecomposition::new(&weyl_quantize(&ho.total_symbol(), &grid)?)?;
    let mut energies = spectral.energies().to_vec();
    energies.sort_by(f64::total_cmp);
    let mut st = CsvTable::new(["n", "energy", "exact", "error"]);
    let mut worst = 0.0f64;
    for (n, e) in energies.iter().take(cfg.weyl.eigenvalues).enumerate() {
        let exact = n as f64 + 0.5;
        worst = worst.max((e - exact).abs());
        st.push_numbers(&[n as f64, *e, exact, (e - exact).abs()]);
    }
    out.metric("spectrum.max_error", worst);
    out.table("oscillator_spectrum", st);

    let full = match &cfg.hamiltonian {
        Some(h) => h.build()?,
        None => HamiltonianSpec::new(
            1,
            Some(QuadraticHamiltonian::harmonic_oscillator(1)),
            vec![SmoothTerm::SinX {
                amplitude: 1.0,
                frequency: 1.0,
            }],
            Some(cosine_atoms(1.0)),
        )?,
    };
    let op = weyl_quantize(&full.total_symbol(), &grid)?;
    out.metric("hermitian.defect", op.hermitian_defect());

    let lat = SymbolLattice::default();
    let symbols = [
        ("cos_x", ft_measure_potential(&cosine_atoms(1.0))),
        (
            "sin_x_sin_xi",
            PhaseSymbol::new(1, SymbolClass::Sjostrand, true, "sin x sin xi", |x, xi| {
                Complex64::new(x[0].sin() * xi[0].sin(), 0.0)
            }),
        ),
        (
            "gaussian",
            PhaseSymbol::new(1, SymbolClass::Sjostrand, true, "gaussian", |x, xi| {
                Complex64::new((-(x[0] * x[0] + xi[0] * xi[0]) / 2.0).exp(), 0.0)
            }),
        ),
    ];
    let mut sj = CsvTable::new(["symbol", "estimate", "refined", "operator_norm", "norm_ratio"]);
    for (name, a) in &symbols {
        let base = sjostrand_norm_estimate(a, &lat)?;
        let fine = sjostrand_norm_estimate(a, &lat.refined())?;
        let opn = weyl_quantize(a, &grid)?.two_norm();
        out.metric(format!("sjostrand.{name}.estimate"), base);
        out.metric(
            format!("sjostrand.{name}.refinement_change"),
            (fine - base).abs() / base,
        );
        out.metric(format!("sjostrand.{name}.norm_ratio"), opn / base);
        sj.push_cells(
            std::iter::once(name.to_string())
                .chain([base, fine, opn, opn / base].iter().map(|v| fmt_float(*v)))
                .collect(),
        );
    }
    out.table("sjostrand", sj);
    Ok(out)
}

fn dyson(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let dc = &cfg.dyson;
    let times = cfg.times.clone().unwrap_or_else(|| vec![0.5, 1.0]);
    if dc.orders.len() != times.len() || dc.quad_steps.len() != times.len() {
        return Err(LabError::Config(format!(
            "dyson: need one order and one quad_steps entry per time ({} times, {} orders, {} quad_steps)",
            times.len(),
            dc.orders.len(),
            dc.quad_steps.len()
        )));
    }
    let oracle_grid = line_grid(cfg, dc.oracle_grid)?;
    let dyson_grid = line_grid(cfg, dc.dyson_grid)?;
    let seed = cfg.seed();
    let mut out = Outcome::default();
    let mut table = CsvTable::new(["method", "hamiltonian", "t", "corpus_error", "operator_error"]);

    let oracle_corpus = TestCorpus::with_random(oracle_grid, seed, dc.random);
    let mut kernel_max = 0.0f64;
    for (name, q) in [
        ("oscillator", QuadraticHamiltonian::harmonic_oscillator(1)),
        ("free", QuadraticHamiltonian::free_particle(1)),
    ] {
        let spec = HamiltonianSpec::quadratic_only(q.clone());
        for &t in &times {
            let k = quadratic_kernel_propagator(&q, t, &oracle_grid)?;
            let r = reference_propagator(&spec, &oracle_grid, t)?;
            let e = corpus_error(&k, &r, &oracle_corpus);
            kernel_max = kernel_max.max(e);
            table.push_cells(vec![
                "kernel".into(),
                name.into(),
                fmt_float(t),
                fmt_float(e),
                fmt_float(f64::NAN),
            ]);
        }
    }
    out.metric("kernel.error_max", kernel_max);

    let split_spec = HamiltonianSpec::new(
        1,
        Some(QuadraticHamiltonian::free_particle(1)),
        vec![],
        Some(cosine_atoms(1.0)),
    )?;
    let mut split_max = 0.0f64;
    for &t in &times {
        let s = split_step_for_spec(&split_spec, t, dc.split_steps, &oracle_grid)?;
        let r = reference_propagator(&split_spec, &oracle_grid, t)?;
        let e = corpus_error(&s, &r, &oracle_corpus);
        split_max = split_max.max(e);
        table.push_cells(vec![
            "split_step".into(),
            "free_cos".into(),
            fmt_float(t),
            fmt_float(e),
            fmt_float(f64::NAN),
        ]);
    }
    out.metric("split_step.error_max", split_max);

    let spec = match &cfg.hamiltonian {
        Some(h) => h.build()?,
        None => HamiltonianSpec::new(
            1,
            Some(QuadraticHamiltonian::harmonic_oscillator(1)),
            vec![SmoothTerm::SinX {
                amplitude: 1.0,
                frequency: 1.0,
            }],
            Some(cosine_atoms(1.0)),
        )?,
    };
    let expansion = DysonExpansion::new(&spec, &dyson_grid)?;
    let dyson_corpus = TestCorpus::with_random(dyson_grid, seed, dc.random);
    let (mut err_max, mut op_max, mut gap_max) = (0.0f64, 0.0f64, 0.0f64);
    for ((&t, &order), &m) in times.iter().zip(&dc.orders).zip(&dc.quad_steps) {
        let (u, state) = expansion.propagator(t, order, m)?;
        let r = reference_propagator(&spec, &dyson_grid, t)?;
        let e = corpus_error(&u, &r, &dyson_corpus);
        let op = operator_error(&u, &r)?;
        err_max = err_max.max(e);
        op_max = op_max.max(op);
        gap_max = gap_max.max(state.refinement_gap.unwrap_or(0.0));
        table.push_cells(vec![
            "dyson".into(),
            "oscillator_sin_cos".into(),
            fmt_float(t),
            fmt_float(e),
            fmt_float(op),
        ]);
    }
    out.metric("dyson.error_max", err_max);
    out.metric("dyson.operator_error_max", op_max);
    out.metric("dyson.refinement_gap_max", gap_max);
    out.table("oracle_agreement", table);

    let state = expansion.terms(dc.factorial_time, dc.factorial_orders, dc.factorial_quad_steps)?;
    let norms = state.term_norms();
    let (constant, ratios) = factorial_fit(&norms);
    let mut ft = CsvTable::new(["k", "norm", "bound", "ratio"]);
    let mut fact = 1.0;
    for (i, (n, r)) in norms.iter().zip(&ratios).enumerate() {
        let k = (i + 1) as f64;
        fact *= k;
        ft.push_numbers(&[k, *n, constant.powf(k) / fact, *r]);
    }
    out.metric("factorial.constant", constant);
    out.metric("factorial.slack_max", max_of(ratios.iter().map(|r| (r - 1.0).abs())));
    out.metric("factorial.ratio_max", max_of(ratios.iter().copied()));
    out.table("factorial", ft);
    Ok(out)
}

/// Least-squares `C` in `log(k!‖b_k‖) ≈ k log C`, with `‖b_k‖k!/C^k` per order.
pub fn factorial_fit(norms: &[f64]) -> (f64, Vec<f64>) {
    let mut fact = 1.0;
    let (mut num, mut den) = (0.0, 0.0);
    let mut scaled = Vec::with_capacity(norms.len());
    for (i, n) in norms.iter().enumerate() {
        let k = (i + 1) as f64;
        fact *= k;
        scaled.push(n * fact);
        num += k * (n * fact).ln();
        den += k * k;
    }
    let c = (num / den).exp();
    let ratios = scaled
        .iter()
        .enumerate()
        .map(|(i, s)| s / c.powi(i as i32 + 1))
        .collect();
    (c, ratios)
}

fn almostdiag(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let ac = &cfg.almostdiag;
    let grid = line_grid(cfg, GridConfig::line(16.0, 256))?;
    let g = window(cfg, grid)?;
    let lattice = cfg
        .lattice
        .unwrap_or(LatticeConfig::boxed(0.5, 11.0, 11.0))
        .build(&grid)?;
    let full = match &cfg.hamiltonian {
        Some(h) => h.build()?,
        None => HamiltonianSpec::new(
            1,
            Some(QuadraticHamiltonian::harmonic_oscillator(1)),
            vec![SmoothTerm::SinX {
                amplitude: 1.0,
                frequency: 1.0,
            }],
            Some(cosine_atoms(1.0)),
        )?,
    };
    let principal = full.without_potential();
    let h = principal.principal_hamiltonian()?;
    let zs = disk_points(ac.z_radius, ac.z_step);
    let mut out = Outcome::default();

    let u = reference_propagator(&principal, &grid, ac.time)?;
    let steps = ac.flow_steps;
    let t = ac.time;
    let flow_map = |z: &PhasePoint| {
        hamiltonian_flow(&h, 0.0, t, z, steps)
            .map(|r| r.endpoint)
            .unwrap_or(PhasePoint::line(f64::NAN, f64::NAN))
    };
    let m = gabor_matrix(&u, &g, &zs, &lattice, &flow_map)?;
    let env = default_envelope(&m)?;
    let fit = fit_polynomial_decay_range(&env, ac.fit_min, ac.fit_max)?;
    let identity = |z: &PhasePoint| *z;
    let wrong = default_envelope(&m.with_flow(&identity))?;
    out.metric("decay.exponent", fit.exponent);
    out.metric("decay.residual", fit.residual);
    out.metric("decay.super_polynomial", if fit.super_polynomial { 1.0 } else { 0.0 });
    out.note("decay.fit_range", format!("[{}, {}]", ac.fit_min, ac.fit_max));
    out.metric("decay.l1", env.l1_norm());
    out.metric("wrong_flow.l1", wrong.l1_norm());
    out.metric("wrong_flow.inflation", wrong.l1_norm() / env.l1_norm());
    out.table("envelope", env.to_csv(Some(&fit)));
    out.table("envelope_wrong_flow", wrong.to_csv(None));

    let linear = match principal.quadratic() {
        Some(q) => q.clone(),
        None => QuadraticHamiltonian::free_particle(1),
    };
    let mut st = CsvTable::new(["t", "l1_principal", "l1_full", "ratio"]);
    let mut ratios = Vec::new();
    for &s in &ac.stability_times {
        let flow = quadratic_flow(&linear, s);
        let lin = |z: &PhasePoint| flow.apply(z);
        let ua = reference_propagator(&principal, &grid, s)?;
        let ub = reference_propagator(&full, &grid, s)?;
        let ea = default_envelope(&gabor_matrix(&ua, &g, &zs, &lattice, &lin)?)?.l1_norm();
        let eb = default_envelope(&gabor_matrix(&ub, &g, &zs, &lattice, &lin)?)?.l1_norm();
        ratios.push(eb / ea);
        st.push_numbers(&[s, ea, eb, eb / ea]);
    }
    out.metric("stability.ratio_max", max_of(ratios.iter().copied()));
    out.metric("stability.ratio_min", min_of(ratios.iter().copied()));
    out.table("stability", st);
    Ok(out)
}

fn bump(grid: Grid, s: f64) -> SampledFunction {
    SampledFunction::from_real_fn(grid, |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s * s)).exp())
}

fn free_dispersive_defaults() -> CaseDefaults {
    CaseDefaults {
        hamiltonian: HamiltonianConfig::named(QuadraticKind::FreeParticle),
        grid: GridConfig::line(128.0, 4096),
        lattice: LatticeConfig::steps(1.0, 0.25),
        window_width: 2.0,
        times: vec![0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0],
        bump_widths: vec![0.1, 0.2, 0.3, 0.5, 0.75, 1.0],
        p: vec![1.0],
        q: f64::INFINITY,
        cutoff_radius: 2.0,
    }
}

fn oscillator_dispersive_defaults() -> CaseDefaults {
    CaseDefaults {
        hamiltonian: HamiltonianConfig::named(QuadraticKind::HarmonicOscillator),
        grid: GridConfig::line(12.0, 256),
        lattice: LatticeConfig::boxed(0.5, 11.5, 10.0),
        window_width: 1.0,
        times: linspace(0.3, PI - 0.3, 9),
        bump_widths: vec![0.2, 0.3, 0.5],
        p: vec![1.0],
        q: f64::INFINITY,
        cutoff_radius: 2.0,
    }
}

fn scan_metrics(out: &mut Outcome, prefix: &str, r: &EstimateReport) {
    out.metric(format!("{prefix}.fitted_exponent"), r.fitted_exponent);
    out.metric(format!("{prefix}.bound_exponent"), r.bound_exponent);
    out.metric(format!("{prefix}.fitted_constant"), r.fitted_constant);
    out.metric(format!("{prefix}.normalized_spread"), r.normalized_spread);
    out.metric(format!("{prefix}.skipped"), r.skipped.len() as f64);
    if !r.skipped.is_empty() {
        out.note(format!("{prefix}.skipped_times"), format!("{:?}", r.skipped));
    }
}

fn dispersive(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Outcome, LabError> {
    let cases = cfg.resolve_cases(
        &cfg.dispersive,
        free_dispersive_defaults(),
        oscillator_dispersive_defaults(),
    )?;
    let mut out = Outcome::default();
    for case in &cases {
        let fam = family(&case.spec, &case.grid, ctx)?;
        let w = Window::gaussian(case.grid, case.window_width);
        let probes = ProbeSet {
            fixed: vec![],
            bump_widths: case.bump_widths.clone(),
            backward: case.backward,
        };
        let q = exponent(case.q)?;
        for &p in &case.p {
            let tag = exponent_tag(p);
            let estimator = ScanEstimator::Dispersive {
                q,
                window: &w,
                lattice: &case.lattice,
            };
            let mut r = blowup_scan(&fam, exponent(p)?, &case.times, &probes, &estimator, &case.name)?;
            r.config_hash = cfg.hash();
            let prefix = format!("{}.{tag}", case.name);
            scan_metrics(&mut out, &prefix, &r);
            out.table(format!("dispersive_{}_{tag}", case.name), r.to_csv(ctx.emit_plot_data));
        }
    }
    Ok(out)
}

fn free_blowup_defaults() -> CaseDefaults {
    CaseDefaults {
        hamiltonian: HamiltonianConfig::named(QuadraticKind::FreeParticle),
        grid: GridConfig::line(48.0, 1024),
        lattice: LatticeConfig::steps(0.5, 0.5),
        window_width: 1.0,
        times: vec![0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0],
        bump_widths: vec![0.2, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
        p: vec![1.0, 1.2, 2.0],
        q: 2.0,
        cutoff_radius: 2.0,
    }
}

fn oscillator_blowup_defaults() -> CaseDefaults {
    CaseDefaults {
        hamiltonian: HamiltonianConfig::named(QuadraticKind::HarmonicOscillator),
        grid: GridConfig::line(12.0, 256),
        lattice: LatticeConfig::steps(0.5, 0.5),
        window_width: 1.0,
        times: linspace(0.3, PI - 0.3, 9),
        bump_widths: vec![0.2, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
        p: vec![1.0, 1.2, 2.0],
        q: 2.0,
        cutoff_radius: 2.0,
    }
}

fn blowup(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Outcome, LabError> {
    let cases = cfg.resolve_cases(&cfg.blowup, free_blowup_defaults(), oscillator_blowup_defaults())?;
    let mut out = Outcome::default();
    for case in &cases {
        let fam = family(&case.spec, &case.grid, ctx)?;
        let phi = Cutoff::Gaussian {
            radius: case.cutoff_radius,
        }
        .sample(&case.grid);
        let corpus = TestCorpus::standard(case.grid, cfg.seed());
        let probes = ProbeSet {
            fixed: corpus.functions().cloned().collect(),
            bump_widths: case.bump_widths.clone(),
            backward: case.backward,
        };
        for &p in &case.p {
            let tag = exponent_tag(p);
            let estimator = ScanEstimator::Restriction { cutoff: &phi };
            let mut r = blowup_scan(&fam, exponent(p)?, &case.times, &probes, &estimator, &case.name)?;
            r.config_hash = cfg.hash();
            scan_metrics(&mut out, &format!("{}.{tag}", case.name), &r);
            out.table(format!("blowup_{}_{tag}", case.name), r.to_csv(ctx.emit_plot_data));
        }
        if case.name == "free" {
            cutoff_failure(&mut out, case)?;
        }
    }
    Ok(out)
}

/// Without a cutoff the free `p = 1` ratio doubles each time the bump width
/// halves; with one it saturates.
fn cutoff_failure(out: &mut Outcome, case: &ResolvedCase) -> Result<(), LabError> {
    let u = free_propagator(1.0, &case.grid);
    let one = Cutoff::One.sample(&case.grid);
    let phi = Cutoff::Gaussian {
        radius: case.cutoff_radius,
    }
    .sample(&case.grid);
    let widths = [0.8, 0.4, 0.2];
    let mut t = CsvTable::new(["width", "ratio_no_cutoff", "ratio_cutoff"]);
    let mut bare = Vec::new();
    let mut cut = Vec::new();
    for s in widths {
        let f = bump(case.grid, s);
        let b = restriction_ratio(&u, &f, &one, Exponent::ONE)?.ratio;
        let c = restriction_ratio(&u, &f, &phi, Exponent::ONE)?.ratio;
        t.push_numbers(&[s, b, c]);
        bare.push(b);
        cut.push(c);
    }
    let growth = |v: &[f64]| v.windows(2).map(|w| w[1] / w[0]).collect::<Vec<_>>();
    out.metric("cutoff_failure.growth_min", min_of(growth(&bare)));
    out.metric("cutoff_failure.cutoff_growth_max", max_of(growth(&cut)));
    out.table("cutoff_failure", t);
    Ok(())
}

/// `J₀(x) = (1/π)∫₀^π cos(x sin θ) dθ` by the trapezoid rule, which is
/// spectrally accurate for this periodic integrand.
pub fn bessel_j0(x: f64) -> f64 {
    let n = 64 + 2 * x.abs().ceil() as usize;
    let h = PI / n as f64;
    let inner: f64 = (1..n).map(|k| (x * (k as f64 * h).sin()).cos()).sum();
    (inner + 1.0) / n as f64
}

/// `e^{-ir²/2} J₀(ρr) e^{-r²/(2W²)}`: after unit free time its mass
/// concentrates on the circle of radius `ρ`, more sharply as `W` grows.
pub fn flattened_probe(grid: Grid, radius: f64, width: f64) -> SampledFunction {
    SampledFunction::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let amp = bessel_j0(radius * r2.sqrt()) * (-r2 / (2.0 * width * width)).exp();
        Complex64::from_polar(amp, -r2 / 2.0)
    })
}

fn restriction(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let rc = &cfg.restriction;
    let grid = cfg
        .grid
        .unwrap_or(GridConfig {
            half_extent: 32.0,
            points: 256,
            dim: 2,
        })
        .build()?;
    if grid.dim() != 2 {
        return Err(LabError::Config(format!(
            "restriction needs a d = 2 grid, got d = {}",
            grid.dim()
        )));
    }
    let u = free_propagator(rc.time, &grid);
    let nu = RestrictionMeasure::circle(rc.radius, rc.points)?;
    let p = exponent(rc.p)?;
    let q = exponent(rc.q)?;
    let mut out = Outcome::default();

    let big = TestCorpus::with_random(
        grid,
        cfg.seed(),
        2 * (crate::corpus::SHAPE_COUNT + rc.random) - crate::corpus::SHAPE_COUNT,
    );
    let small_len = crate::corpus::SHAPE_COUNT + rc.random;
    let ratios = par::map_slice(big.members(), |m| measure_restriction_ratio(&u, &m.function, &nu, p, q));
    let mut t = CsvTable::new(["member", "ratio", "in_base_corpus"]);
    let (mut small_max, mut big_max) = (0.0f64, 0.0f64);
    for (i, (m, r)) in big.members().iter().zip(ratios).enumerate() {
        let r = r?.ratio;
        big_max = big_max.max(r);
        if i < small_len {
            small_max = small_max.max(r);
        }
        t.push_cells(vec![m.name.clone(), fmt_float(r), (i < small_len).to_string()]);
    }
    out.metric("stein_tomas.max_ratio", small_max);
    out.metric("stein_tomas.max_ratio_doubled", big_max);
    out.metric("stein_tomas.doubling_change", big_max / small_max - 1.0);
    out.table("stein_tomas", t);

    let high = exponent(rc.flattened_p)?;
    let mut ft = CsvTable::new(["width", "ratio_base_p", "ratio_high_p"]);
    let mut base = Vec::new();
    let mut flat = Vec::new();
    for &w in &rc.flattened_widths {
        let f = flattened_probe(grid, rc.radius, w);
        let a = measure_restriction_ratio(&u, &f, &nu, p, q)?.ratio;
        let b = measure_restriction_ratio(&u, &f, &nu, high, q)?.ratio;
        ft.push_numbers(&[w, a, b]);
        base.push(a);
        flat.push(b);
    }
    let steps = |v: &[f64]| v.windows(2).map(|w| w[1] / w[0]).collect::<Vec<_>>();
    let total = |v: &[f64]| v[v.len() - 1] / v[0];
    out.metric("flattened.step_growth_min", min_of(steps(&flat)));
    out.metric("flattened.total_growth", total(&flat));
    out.metric("flattened.total_growth_base_p", total(&base));
    out.table("flattened", ft);
    Ok(out)
}

fn microlocal(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Outcome, LabError> {
    let mc = &cfg.microlocal;
    let grid = line_grid(cfg, GridConfig::line(12.0, 256))?;
    let g = window(cfg, grid)?;
    let spec = match &cfg.hamiltonian {
        Some(h) => h.build()?,
        None => HamiltonianSpec::quadratic_only(QuadraticHamiltonian::harmonic_oscillator(1)),
    };
    let q = spec
        .quadratic()
        .cloned()
        .ok_or_else(|| LabError::Config("microlocal: the Hamiltonian needs a quadratic part".into()))?;
    let flow: SymplecticMatrix = quadratic_flow(&q, mc.time);
    let u = family(&spec, &grid, ctx)?.at(mc.time)?;
    let [v, _] = required_directions(&flow);
    let sectors = [
        ConicSector::new(v, mc.half_angle, 1.0)?,
        ConicSector::new([-v[0], -v[1]], mc.half_angle, 1.0)?,
    ];
    let psi = build_cutoff(&sectors, mc.epsilon)?;
    let phi = Cutoff::Gaussian {
        radius: mc.cutoff_radius,
    }
    .sample(&grid);
    let corpus = TestCorpus::with_random(grid, cfg.seed(), mc.random);
    let members: Vec<(&str, &SampledFunction)> = corpus
        .members()
        .iter()
        .map(|m| (m.name.as_str(), &m.function))
        .collect();
    let p = exponent(mc.p)?;
    let report = micro_restriction_check(&u, &flow, &psi, &phi, members.iter().copied(), p, mc.order)?;
    let mut out = Outcome::default();
    out.metric("micro.c", report.c);
    out.metric("micro.c_n", report.c_n);
    out.metric("micro.det_b", report.det_b);
    out.metric("micro.holds", if report.holds(1e-9) { 1.0 } else { 0.0 });
    out.metric("micro.min_slack", min_of(report.rows.iter().map(|r| r.slack)));
    out.table("microlocal", report.to_csv());

    let lattice = cfg
        .lattice
        .unwrap_or(LatticeConfig::boxed(0.5, 11.0, 11.0))
        .build(&grid)?;
    let centre = PhasePoint::line(mc.witness_centre * v[0], mc.witness_centre * v[1]);
    let gaussian = SampledFunction::from_real_fn(grid, |x| (-x[0] * x[0] / 2.0).exp());
    let witness = cone_supported_witness(
        &phase_shift(&gaussian, &centre),
        &g,
        &lattice,
        &psi,
        mc.witness_min_radius,
    )?;
    let psi_op = weyl_quantize(&psi.symbol(), &grid)?;
    let (first, second) = report.terms(
        lp_norm(&psi_op.apply(&witness), p),
        weighted_negative_sobolev(&witness, mc.order),
    );
    out.metric("witness.principal_term", first);
    out.metric("witness.remainder_term", second);
    out.metric("witness.remainder_fraction", second / first);
    let mut wt = CsvTable::new(["input", "psi_term", "remainder_term", "fraction"]);
    wt.push_cells(vec![
        "witness".into(),
        fmt_float(first),
        fmt_float(second),
        fmt_float(second / first),
    ]);
    out.table("witness", wt);

    let quarters: Vec<ConicSector> = (0..4)
        .map(|k| ConicSector::from_angle(k as f64 * PI / 2.0, PI / 4.0 + 0.01, 1.0))
        .collect::<Result<_, _>>()?;
    let full = build_cutoff(&quarters, mc.epsilon)?;
    let trivial = micro_restriction_check(&u, &flow, &full, &phi, members.iter().copied(), p, mc.order)?;
    let max_ratio = max_of(
        par::map_slice(corpus.members(), |m| {
            restriction_ratio(&u, &m.function, &phi, p).map(|r| r.ratio)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?,
    );
    out.metric("reduction.c", trivial.c);
    out.metric("reduction.max_ratio", max_ratio);
    out.metric("reduction.c_over_max_ratio", trivial.c / max_ratio);
    Ok(out)
}

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::TestCorpus;

fn line() -> Grid {
    Grid::line(12.0, 256).unwrap()
}

fn gauss(grid: Grid, width: f64) -> SampledFunction {
    SampledFunction::from_real_fn(grid, |x| (-x[0] * x[0] / (2.0 * width * width)).exp())
}

fn random_function(grid: Grid, seed: u64) -> SampledFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SampledFunction::from_fn(grid, |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Direct Riemann sum `h Σ e^{-i x ξ} f(x)` at an arbitrary frequency.
fn riemann_ft(f: &SampledFunction, xi: f64) -> Complex64 {
    let g = f.grid();
    f.values()
        .iter()
        .enumerate()
        .map(|(k, v)| v * Complex64::from_polar(1.0, -g.coordinate(k) * xi))
        .sum::<Complex64>()
        * g.spacing()
}

#[test]
fn grid_rejects_bad_parameters() {
    assert!(Grid::new(3, 1.0, 8).is_err());
    assert!(Grid::new(1, 1.0, 7).is_err());
    assert!(Grid::new(1, -1.0, 8).is_err());
    let g = line();
    assert!((g.spacing() * g.points() as f64 - 24.0).abs() < 1e-14);
    assert!((g.dual_spacing() - 2.0 * PI / 24.0).abs() < 1e-15);
    assert!((g.frequency(0) + g.max_frequency()).abs() < 1e-12);
    assert!(g.dual().dual().same_as(&g));
}

#[test]
fn gaussian_transform_matches_quadrature_and_closed_form() {
    let f = gauss(line(), 1.0);
    let ff = fourier_transform(&f);
    let dual = *ff.grid();
    for (m, v) in ff.values().iter().enumerate() {
        let xi = dual.coordinate(m);
        if xi.abs() > 6.0 {
            continue;
        }
        let oracle = riemann_ft(&f, xi);
        assert!((v - oracle).norm() <= 1e-8 * oracle.norm().max(1e-300), "xi {xi}");
        let exact = (2.0 * PI).sqrt() * (-xi * xi / 2.0).exp();
        assert!((v.re - exact).abs() <= 1e-8 * exact, "xi {xi}: {} vs {exact}", v.re);
    }
}

#[test]
fn point_mass_has_flat_spectrum() {
    let g = line();
    let mut values = vec![Complex64::new(0.0, 0.0); g.points()];
    values[100] = Complex64::new(1.0 / g.spacing(), 0.0);
    let ff = fourier_transform(&SampledFunction::new(g, values).unwrap());
    for v in ff.values() {
        assert!((v.norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn plancherel_and_inversion() {
    for grid in [line(), Grid::new(2, 8.0, 64).unwrap()] {
        let f = random_function(grid, 3);
        let ff = fourier_transform(&f);
        let ratio = ff.norm().powi(2) / f.norm().powi(2);
        let expected = (2.0 * PI).powi(grid.dim() as i32);
        assert!((ratio / expected - 1.0).abs() < 1e-10);
        let back = inverse_fourier_transform(&ff);
        assert!(back.grid().same_as(&grid));
        assert!(back.relative_error(&f) < 1e-12);
    }
}

#[test]
fn two_dimensional_transform_factorizes() {
    let grid = Grid::new(2, 8.0, 64).unwrap();
    let f = SampledFunction::from_real_fn(grid, |p| (-(p[0] * p[0] + 2.0 * p[1] * p[1]) / 2.0).exp());
    let ff = fourier_transform(&f);
    let dual = *ff.grid();
    for (i, v) in ff.values().iter().enumerate() {
        let p = dual.sample_point(i);
        if p[0].abs() > 4.0 || p[1].abs() > 4.0 {
            continue;
        }
        let exact = 2.0 * PI / 2f64.sqrt() * (-(p[0] * p[0] + p[1] * p[1] / 2.0) / 2.0).exp();
        assert!((v - exact).norm() < 1e-8 * exact.max(1e-3));
    }
}

#[test]
fn window_normalization() {
    for grid in [line(), Grid::new(2, 8.0, 64).unwrap()] {
        let w = Window::standard(grid);
        let target = (2.0 * PI).powf(-(grid.dim() as f64) / 2.0);
        assert!((w.base().norm() / target - 1.0).abs() < 1e-10);
        assert!(w.is_normalized());
        assert!(w.reach() > 8.0 && w.reach() < 10.0);
    }
    let raw = Window::from_samples(gauss(line(), 1.0), false).unwrap();
    assert!(!raw.is_normalized());
}

#[test]
fn zero_shift_is_identity() {
    let g = Window::standard(line());
    let s = phase_shift(g.base(), &PhasePoint::origin());
    assert_eq!(s.values(), g.base().values());
}

#[test]
fn shifts_are_isometries() {
    let g = Window::standard(line());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let z = PhasePoint::line(rng.random_range(-5.0..5.0), rng.random_range(-10.0..10.0));
        let s = phase_shift(g.base(), &z);
        assert!((s.norm() / g.base().norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn shift_matches_analytic_packet() {
    let grid = line();
    let g = Window::standard(grid);
    let c = g.base().values()[grid.points() / 2].re;
    let z = PhasePoint::line(1.37, -2.2);
    let s = phase_shift(g.base(), &z);
    let exact = SampledFunction::from_fn(grid, |y| {
        Complex64::from_polar(c * (-(y[0] - 1.37).powi(2) / 2.0).exp(), -2.2 * y[0])
    });
    assert!(s.relative_error(&exact) < 1e-12);
}

#[test]
fn shift_correlations_depend_on_difference() {
    let g = Window::standard(line());
    let pts: Vec<PhasePoint> = (0..5)
        .flat_map(|a| (0..5).map(move |b| PhasePoint::line(-2.0 + a as f64, -2.0 + b as f64)))
        .collect();
    let offset = PhasePoint::line(0.7, -1.3);
    for z1 in &pts {
        for z2 in &pts {
            let a = phase_shift(g.base(), z1).inner(&phase_shift(g.base(), z2));
            let b = phase_shift(g.base(), &(*z1 + offset)).inner(&phase_shift(g.base(), &(*z2 + offset)));
            assert!((a.norm() - b.norm()).abs() < 1e-12);
            if z1 == z2 {
                assert!((a.re - g.base().norm().powi(2)).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn stft_of_window_is_gaussian_in_phase_space() {
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    let v = stft(g.base(), &g, &lat).unwrap();
    let g2 = g.base().norm().powi(2);
    let probes = [
        (0.0, 0.0),
        (0.5, 0.0),
        (0.0, 1.0),
        (1.0, 1.0),
        (-1.5, 0.5),
        (2.0, -2.0),
        (0.0, -3.0),
        (3.0, 0.0),
        (-2.5, 2.5),
    ];
    let mut last = f64::INFINITY;
    let mut sorted = probes.to_vec();
    sorted.sort_by(|a, b| (a.0 * a.0 + a.1 * a.1).partial_cmp(&(b.0 * b.0 + b.1 * b.1)).unwrap());
    for (x, xi) in sorted {
        let z = PhasePoint::line(x, xi);
        let idx = lat.locate(&z, 1e-9).unwrap();
        let direct = g.base().inner(&phase_shift(g.base(), &z));
        assert!((v.values()[idx] - direct).norm() < 1e-14);
        let closed = g2 * (-(x * x + xi * xi) / 4.0).exp();
        assert!((v.values()[idx].norm() - closed).abs() < 1e-12);
        assert!(v.values()[idx].norm() <= last + 1e-15);
        last = v.values()[idx].norm();
    }
    let peak = v.values().iter().map(|c| c.norm()).fold(0.0, f64::max);
    assert!((peak - g2).abs() < 1e-14);
}

#[test]
fn stft_isometry_and_reconstruction_on_default_lattice() {
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    for m in TestCorpus::standard(grid, 5).members() {
        let v = stft(&m.function, &g, &lat).unwrap();
        let iso = (v.l2_norm() - m.function.norm()).abs() / m.function.norm();
        assert!(iso <= 0.02, "{}: {iso}", m.name);
        let rec = stft_inverse(&v, &g, &lat).unwrap();
        assert!(rec.relative_error(&m.function) <= 1e-3, "{}", m.name);
    }
}

#[test]
fn reconstruction_improves_under_refinement() {
    let grid = line();
    let g = Window::standard(grid);
    let h1 = SampledFunction::from_real_fn(grid, |x| x[0] * (-x[0] * x[0] / 2.0).exp());
    let mut last = f64::INFINITY;
    for step in [0.5, 0.25, 0.125] {
        let lat = PhaseLattice::covering(&grid, step, step).unwrap();
        let rec = stft_inverse(&stft(&h1, &g, &lat).unwrap(), &g, &lat).unwrap();
        let err = rec.relative_error(&h1);
        assert!(err < last, "step {step}: {err} vs {last}");
        last = err;
    }
}

#[test]
fn zero_in_zero_out() {
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    let v = stft(&SampledFunction::zeros(grid), &g, &lat).unwrap();
    assert_eq!(v.max_abs(), 0.0);
    let back = stft_inverse(&PhaseArray::zeros(lat.clone()), &g, &lat).unwrap();
    assert_eq!(back.max_abs(), 0.0);
}

#[test]
fn stft_rejects_lattice_outside_grid() {
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::centered(1, 0.5, 13.0, 0.5, 2.0).unwrap();
    assert!(matches!(
        stft(g.base(), &g, &lat),
        Err(PhaseSpaceError::LatticeExtent { axis: "x", .. })
    ));
    let raw = Window::from_samples(gauss(grid, 1.0), false).unwrap();
    let ok = PhaseLattice::default_for(&grid);
    assert!(matches!(
        stft(g.base(), &raw, &ok),
        Err(PhaseSpaceError::UnnormalizedWindow)
    ));
}

#[test]
fn two_dimensional_stft_round_trip() {
    let grid = Grid::new(2, 8.0, 64).unwrap();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    let f = SampledFunction::from_fn(grid, |p| {
        Complex64::from_polar((-((p[0] - 1.0).powi(2) + p[1] * p[1]) / 2.0).exp(), 0.7 * p[1])
    });
    let v = stft(&f, &g, &lat).unwrap();
    assert!((v.l2_norm() / f.norm() - 1.0).abs() < 0.02);
    let z = PhasePoint::plane([1.0, -0.5], [0.5, 1.0]);
    let idx = lat.locate(&z, 1e-9).unwrap();
    let direct = f.inner(&phase_shift(g.base(), &z));
    assert!((v.values()[idx] - direct).norm() < 1e-13);
    let rec = stft_inverse(&v, &g, &lat).unwrap();
    assert!(rec.relative_error(&f) < 1e-3);
}

#[test]
fn mixed_norm_symmetric_cases() {
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    let corpus = TestCorpus::standard(grid, 2);
    let f = &corpus.members()[3].function;
    let v = stft(f, &g, &lat).unwrap();
    for p in [1.0, 1.5, 2.0, 4.0] {
        let p = Exponent::new(p).unwrap();
        let a = mixed_norm(&v, p, p, Axis::X);
        let b = mixed_norm(&v, p, p, Axis::Xi);
        assert!((a - b).abs() <= 1e-10 * a);
    }
    let inf = Exponent::INFINITY;
    assert!((mixed_norm(&v, inf, inf, Axis::X) - mixed_norm(&v, inf, inf, Axis::Xi)).abs() < 1e-15);
    let two = mixed_norm(&v, Exponent::TWO, Exponent::TWO, Axis::X);
    assert!((two / f.norm() - 1.0).abs() < 0.02);
}

#[test]
fn single_cell_norm_closed_form() {
    let lat = PhaseLattice::centered(1, 0.5, 2.0, 0.25, 1.0).unwrap();
    let mut a = PhaseArray::zeros(lat.clone());
    a.values_mut()[7] = Complex64::new(1.0, 0.0);
    for (p, q) in [(1.0, 1.0), (2.0, 1.0), (1.0, 3.0), (1.5, 2.5)] {
        let (pe, qe) = (Exponent::new(p).unwrap(), Exponent::new(q).unwrap());
        let w = mixed_norm(&a, pe, qe, Axis::X);
        assert!((w - 0.25f64.powf(1.0 / p) * 0.5f64.powf(1.0 / q)).abs() < 1e-14);
        let m = mixed_norm(&a, pe, qe, Axis::Xi);
        assert!((m - 0.5f64.powf(1.0 / p) * 0.25f64.powf(1.0 / q)).abs() < 1e-14);
    }
    assert_eq!(mixed_norm(&a, Exponent::INFINITY, Exponent::ONE, Axis::X), 0.5);
}

#[test]
fn exponent_parsing() {
    assert_eq!("inf".parse::<Exponent>().unwrap(), Exponent::INFINITY);
    assert!(("6/5".parse::<Exponent>().unwrap().value() - 1.2).abs() < 1e-15);
    assert!("0.5".parse::<Exponent>().is_err());
    assert_eq!(Exponent::ONE.conjugate(), Exponent::INFINITY);
    assert!((Exponent::new(1.2).unwrap().conjugate().value() - 6.0).abs() < 1e-12);
}

#[test]
fn gaussian_norms_are_finite_and_positive() {
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    let f = gauss(grid, 1.0);
    for (p, q) in [(1.0, 1.0), (1.0, f64::INFINITY), (f64::INFINITY, 1.0), (2.0, 2.0)] {
        let (p, q) = (Exponent::new(p).unwrap(), Exponent::new(q).unwrap());
        for v in [
            wiener_amalgam_norm(&f, &g, &lat, p, q).unwrap(),
            modulation_norm(&f, &g, &lat, p, q).unwrap(),
        ] {
            assert!(v.is_finite() && v > 0.0);
        }
    }
}

#[test]
fn lebesgue_embedding_into_amalgam() {
    // ‖f‖_{W^{p',p}} ≤ (2π)^{d/p'} ‖g‖_p ‖f‖_p by Hausdorff–Young and Young.
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    let corpus = TestCorpus::standard(grid, 9);
    for p in [1.0, 1.2, 1.5, 2.0] {
        let p = Exponent::new(p).unwrap();
        let bound = (2.0 * PI).powf(1.0 - p.reciprocal()) * lp_norm(g.base(), p);
        let worst = corpus
            .functions()
            .map(|f| wiener_amalgam_norm(f, &g, &lat, p.conjugate(), p).unwrap() / lp_norm(f, p))
            .fold(0.0, f64::max);
        assert!(worst <= bound * 1.02, "p {p}: {worst} > {bound}");
    }
}

#[test]
fn dilation_norms_stable_under_refinement() {
    let grid = line();
    let g = Window::standard(grid);
    let f = SampledFunction::from_real_fn(grid, |x| (-(2.0 * x[0]).powi(2) / 2.0).exp());
    let coarse = PhaseLattice::covering(&grid, 0.5, 0.5).unwrap();
    let fine = PhaseLattice::covering(&grid, 0.25, 0.25).unwrap();
    for (p, q) in [(1.0, 2.0), (2.0, 1.0), (1.0, 1.0)] {
        let (p, q) = (Exponent::new(p).unwrap(), Exponent::new(q).unwrap());
        let a = wiener_amalgam_norm(&f, &g, &coarse, p, q).unwrap();
        let b = wiener_amalgam_norm(&f, &g, &fine, p, q).unwrap();
        assert!((a / b - 1.0).abs() < 0.05);
    }
}

#[test]
fn sobolev_norm_order_zero_is_l2() {
    let f = random_function(line(), 4);
    assert!((weighted_sobolev_norm(&f, 0) - lp_norm(&f, Exponent::TWO)).abs() <= 1e-12 * f.norm());
}

#[test]
fn sobolev_norm_matches_quadrature() {
    let f = gauss(line(), 1.0);
    let value = weighted_sobolev_norm(&f, 2);
    // Independent quadrature on a finer x-grid and a wide ξ-grid.
    let hx = 0.01;
    let xs: Vec<f64> = (0..=4000).map(|k| -20.0 + k as f64 * hx).collect();
    let u: Vec<f64> = xs.iter().map(|x| (-x * x / 2.0).exp() / (1.0 + x * x)).collect();
    let dxi = 0.01;
    let mut total = 0.0;
    for k in 0..=8000 {
        let xi = -40.0 + k as f64 * dxi;
        let ft: Complex64 = xs
            .iter()
            .zip(&u)
            .map(|(x, v)| Complex64::from_polar(*v, -x * xi))
            .sum::<Complex64>()
            * hx;
        total += ft.norm_sqr() / (1.0 + xi * xi).powi(2) * dxi;
    }
    let oracle = (total / (2.0 * PI)).sqrt();
    assert!((value - oracle).abs() < 1e-6 * oracle, "{value} vs {oracle}");
}

#[test]
fn sobolev_norm_is_homogeneous() {
    let f = random_function(line(), 5);
    let c = Complex64::new(-1.5, 2.0);
    let a = weighted_sobolev_norm(&f.scaled(c), 4);
    let b = c.norm() * weighted_sobolev_norm(&f, 4);
    assert!((a - b).abs() < 1e-12 * b);
}

#[test]
fn binary_round_trip() {
    let grid = line();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    let v = stft(g.base(), &g, &lat).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.bin");
    io::save_phase_array(&path, &grid, &v).unwrap();
    let (g2, v2) = io::load_phase_array(&path).unwrap();
    assert!(g2.same_as(&grid));
    assert_eq!(v2.values(), v.values());
    assert_eq!(v2.lattice().len(), lat.len());
    for (a, b) in v2.lattice().x_nodes().iter().zip(lat.x_nodes()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn csv_dialect() {
    let mut t = io::CsvTable::new(["r", "value"]);
    t.push_numbers(&[0.5, 1e-3]);
    assert_eq!(t.render(), "r,value\n5.000000000000e-1,1.000000000000e-3\n");
}

fn amalgam(f: &SampledFunction, p: f64, q: f64) -> f64 {
    let grid = *f.grid();
    let g = Window::standard(grid);
    let lat = PhaseLattice::default_for(&grid);
    wiener_amalgam_norm(f, &g, &lat, Exponent::new(p).unwrap(), Exponent::new(q).unwrap()).unwrap()
}

#[test]
fn fourier_amalgam_exchange_with_single_constant() {
    // ‖Ff‖_{W^{p,q}} ≤ C ‖f‖_{W^{q,p}}: fit C on the shapes, check it on the random fields.
    let grid = line();
    let corpus = TestCorpus::standard(grid, 21);
    for (p, q) in [(1.0, 2.0), (1.0, f64::INFINITY), (2.0, f64::INFINITY)] {
        let ratios: Vec<f64> = corpus
            .functions()
            .map(|f| amalgam(&fourier_transform(f), p, q) / amalgam(f, q, p))
            .collect();
        let fitted = ratios[..crate::corpus::SHAPE_COUNT].iter().cloned().fold(0.0, f64::max);
        for r in &ratios[crate::corpus::SHAPE_COUNT..] {
            assert!(*r <= 2.0 * fitted, "({p},{q}): {r} vs fitted {fitted}");
        }
    }
}

#[test]
fn amalgam_nesting() {
    let grid = line();
    let corpus = TestCorpus::standard(grid, 13);
    let pairs = [
        ((1.0, 1.0), (2.0, 2.0)),
        ((1.0, 2.0), (2.0, f64::INFINITY)),
        ((1.0, 1.0), (f64::INFINITY, 2.0)),
    ];
    for ((p1, q1), (p2, q2)) in pairs {
        let ratios: Vec<f64> = corpus
            .functions()
            .map(|f| amalgam(f, p2, q2) / amalgam(f, p1, q1))
            .collect();
        let fitted = ratios[..crate::corpus::SHAPE_COUNT].iter().cloned().fold(0.0, f64::max);
        for r in &ratios {
            assert!(*r <= 2.0 * fitted);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_shift_isometry(x in -5.0f64..5.0, xi in -20.0f64..20.0) {
        let g = Window::standard(line());
        let s = phase_shift(g.base(), &PhasePoint::line(x, xi));
        prop_assert!((s.norm() / g.base().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn prop_plancherel(seed in 0u64..1000) {
        let f = random_function(line(), seed);
        let ratio = fourier_transform(&f).norm() / f.norm();
        prop_assert!((ratio / (2.0 * PI).sqrt() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn prop_mixed_norm_diagonal_agrees(seed in 0u64..200, p in 1.0f64..6.0) {
        let grid = line();
        let g = Window::standard(grid);
        let lat = PhaseLattice::default_for(&grid);
        let f = TestCorpus::random_band_limited(grid, seed, 0);
        let v = stft(&f, &g, &lat).unwrap();
        let p = Exponent::new(p).unwrap();
        let a = mixed_norm(&v, p, p, Axis::X);
        let b = mixed_norm(&v, p, p, Axis::Xi);
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn prop_stft_is_linear(seed in 0u64..200, re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let grid = line();
        let g = Window::standard(grid);
        let lat = PhaseLattice::covering(&grid, 1.0, 1.0).unwrap();
        let f1 = TestCorpus::random_band_limited(grid, seed, 1);
        let f2 = TestCorpus::random_band_limited(grid, seed, 2);
        let c = Complex64::new(re, im);
        let lhs = stft(&f1.add(&f2.scaled(c)), &g, &lat).unwrap();
        let a = stft(&f1, &g, &lat).unwrap();
        let b = stft(&f2, &g, &lat).unwrap();
        for ((l, x), y) in lhs.values().iter().zip(a.values()).zip(b.values()) {
            prop_assert!((l - (x + c * y)).norm() < 1e-12);
        }
    }
}

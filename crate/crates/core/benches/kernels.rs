//! Hot kernels, tagged with the execution mode. Compare the two modes with
//! `cargo bench` and `cargo bench --no-default-features`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use phaselab::almost_diag::{disk_points, gabor_matrix};
use phaselab::corpus::TestCorpus;
use phaselab::estimates::{blowup_scan, Cutoff, ProbeSet, PropagatorFamily, ScanEstimator};
use phaselab::par;
use phaselab::phase_space::{stft, Exponent, Grid, PhaseLattice, PhasePoint, Window};
use phaselab::propagator::{free_propagator, HamiltonianSpec};
use phaselab::symplectic_flow::{flow_points, square_samples, QuadraticHamiltonian, SmoothTerm, TameHamiltonian};

fn corpus_stft(c: &mut Criterion) {
    let grid = Grid::line(12.0, 256).unwrap();
    let g = Window::standard(grid);
    let lat = PhaseLattice::covering(&grid, 0.5, 0.5).unwrap();
    let corpus = TestCorpus::standard(grid, 1);
    c.bench_function(&format!("corpus_stft/{}", par::MODE), |b| {
        b.iter(|| par::map_slice(corpus.members(), |m| stft(&m.function, &g, &lat).unwrap().l2_norm()))
    });
}

fn gabor(c: &mut Criterion) {
    let grid = Grid::line(16.0, 256).unwrap();
    let g = Window::standard(grid);
    let lat = PhaseLattice::centered(1, 0.5, 8.0, 0.5, 8.0).unwrap();
    let u = free_propagator(1.0, &grid);
    let zs = disk_points(2.0, 0.5);
    let id = |z: &PhasePoint| *z;
    c.bench_function(&format!("gabor_matrix/{}", par::MODE), |b| {
        b.iter(|| gabor_matrix(&u, &g, &zs, &lat, &id).unwrap().max_abs())
    });
}

fn flows(c: &mut Criterion) {
    let h = TameHamiltonian::new(
        1,
        Some(QuadraticHamiltonian::harmonic_oscillator(1)),
        vec![SmoothTerm::SinX {
            amplitude: 1.0,
            frequency: 1.0,
        }],
    )
    .unwrap();
    let points = square_samples(3.0, 9);
    c.bench_function(&format!("flow_points/{}", par::MODE), |b| {
        b.iter(|| flow_points(&h, 0.0, 1.0, black_box(&points), 200).unwrap())
    });
}

fn restriction_scan(c: &mut Criterion) {
    let grid = Grid::line(48.0, 1024).unwrap();
    let spec = HamiltonianSpec::quadratic_only(QuadraticHamiltonian::free_particle(1));
    let family = PropagatorFamily::new(&spec, &grid).unwrap();
    let phi = Cutoff::Gaussian { radius: 2.0 }.sample(&grid);
    let probes = ProbeSet {
        fixed: TestCorpus::standard(grid, 1).functions().cloned().collect(),
        bump_widths: vec![0.2, 0.5, 1.0],
        backward: true,
    };
    let est = ScanEstimator::Restriction { cutoff: &phi };
    c.bench_function(&format!("restriction_scan/{}", par::MODE), |b| {
        b.iter(|| blowup_scan(&family, Exponent::ONE, &[0.5, 1.0, 2.0], &probes, &est, "free").unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = corpus_stft, gabor, flows, restriction_scan
}
criterion_main!(benches);

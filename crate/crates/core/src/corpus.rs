//! Deterministic test corpus: structured shapes plus seeded random
//! band-limited fields.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::phase_space::{inverse_fourier_transform, Grid, SampledFunction};

type Profile = Box<dyn Fn(&[f64]) -> Complex64>;

pub const SHAPE_COUNT: usize = 8;
pub const RANDOM_COUNT: usize = 12;

#[derive(Debug, Clone)]
pub struct CorpusMember {
    pub name: String,
    pub function: SampledFunction,
}

#[derive(Debug, Clone)]
pub struct TestCorpus {
    grid: Grid,
    seed: u64,
    members: Vec<CorpusMember>,
}

fn sq(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum()
}

fn gaussian(p: &[f64], width: f64) -> f64 {
    (-sq(p) / (2.0 * width * width)).exp()
}

fn shifted(p: &[f64], by: f64) -> Vec<f64> {
    p.iter().map(|v| v - by).collect()
}

impl TestCorpus {
    /// Eight shapes followed by twelve random band-limited fields.
    pub fn standard(grid: Grid, seed: u64) -> Self {
        Self::with_random(grid, seed, RANDOM_COUNT)
    }

    pub fn with_random(grid: Grid, seed: u64, random: usize) -> Self {
        let mut members = Self::shapes(grid);
        members.extend((0..random).map(|i| CorpusMember {
            name: format!("random_{i:02}"),
            function: Self::random_band_limited(grid, seed, i),
        }));
        Self { grid, seed, members }
    }

    pub fn from_members(grid: Grid, seed: u64, members: Vec<CorpusMember>) -> Self {
        Self { grid, seed, members }
    }

    pub fn shapes(grid: Grid) -> Vec<CorpusMember> {
        let x0 = 1.5;
        let xi0 = 2.0;
        let list: Vec<(&str, Profile)> = vec![
            ("gaussian", Box::new(|p| Complex64::new(gaussian(p, 1.0), 0.0))),
            ("narrow_gaussian", Box::new(|p| Complex64::new(gaussian(p, 0.5), 0.0))),
            ("wide_gaussian", Box::new(|p| Complex64::new(gaussian(p, 2.0), 0.0))),
            (
                "packet",
                Box::new(move |p| {
                    let phase: f64 = p.iter().map(|v| xi0 * v).sum();
                    Complex64::from_polar(gaussian(&shifted(p, x0), 1.0), phase)
                }),
            ),
            ("hermite_1", Box::new(|p| Complex64::new(p[0] * gaussian(p, 1.0), 0.0))),
            (
                "hermite_2",
                Box::new(|p| {
                    let poly = if p.len() == 1 {
                        2.0 * p[0] * p[0] - 1.0
                    } else {
                        p[0] * p[1]
                    };
                    Complex64::new(poly * gaussian(p, 1.0), 0.0)
                }),
            ),
            (
                "chirp",
                Box::new(|p| Complex64::from_polar(gaussian(p, 2.0), sq(p) / 2.0)),
            ),
            (
                "packet_pair",
                Box::new(|p| {
                    let a = gaussian(&shifted(p, 2.0), 1.0);
                    let b = gaussian(&shifted(p, -2.0), 1.0);
                    Complex64::new(a, 0.0) + Complex64::from_polar(b, std::f64::consts::FRAC_PI_2 - p[0])
                }),
            ),
        ];
        list.into_iter()
            .map(|(name, f)| CorpusMember {
                name: name.to_string(),
                function: SampledFunction::from_fn(grid, f),
            })
            .collect()
    }

    /// Random spectrum on `|ξ| ≤ B`, multiplied by a Gaussian envelope of
    /// width `L/6`, normalized to unit `L²` norm.
    pub fn random_band_limited(grid: Grid, seed: u64, index: usize) -> SampledFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
        let band = (0.25 * grid.max_frequency()).min(4.0);
        let dual = grid.dual();
        let d = dual.dim();
        let spectrum = SampledFunction::from_fn(dual, |xi| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            if xi[..d].iter().map(|v| v * v).sum::<f64>().sqrt() <= band {
                Complex64::new(re, im)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let envelope = grid.half_extent() / 6.0;
        let f = inverse_fourier_transform(&spectrum).multiplied_by(|p| Complex64::new(gaussian(p, envelope), 0.0));
        let n = f.norm();
        f.scaled(Complex64::new(1.0 / n, 0.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn members(&self) -> &[CorpusMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn functions(&self) -> impl Iterator<Item = &SampledFunction> {
        self.members.iter().map(|m| &m.function)
    }

    /// The first `n` members, keeping the enumeration order.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            grid: self.grid,
            seed: self.seed,
            members: self.members.iter().take(n).cloned().collect(),
        }
    }

    pub fn extend(&mut self, extra: impl IntoIterator<Item = CorpusMember>) {
        self.members.extend(extra);
    }
}

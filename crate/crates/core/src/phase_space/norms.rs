use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fourier::fourier_transform;
use super::grid::SampledFunction;
use super::lattice::{PhaseArray, PhaseLattice};
use super::stft::stft;
use super::window::Window;
use super::PhaseSpaceError;

/// Lebesgue exponent in `[1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "ExponentRepr", into = "ExponentRepr")]
pub struct Exponent(f64);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<ExponentRepr> for Exponent {
    type Error = PhaseSpaceError;
    fn try_from(r: ExponentRepr) -> Result<Self, Self::Error> {
        match r {
            ExponentRepr::Number(v) => Exponent::new(v),
            ExponentRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Exponent> for ExponentRepr {
    fn from(e: Exponent) -> Self {
        if e.is_infinite() {
            ExponentRepr::Text("inf".into())
        } else {
            ExponentRepr::Number(e.0)
        }
    }
}

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self, PhaseSpaceError> {
        if p >= 1.0 && !p.is_nan() {
            Ok(Self(p))
        } else {
            Err(PhaseSpaceError::InvalidExponent(p))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }

    /// Hölder conjugate `p' = p/(p−1)`.
    pub fn conjugate(&self) -> Exponent {
        if self.0 == 1.0 {
            Exponent::INFINITY
        } else if self.is_infinite() {
            Exponent::ONE
        } else {
            Exponent(self.0 / (self.0 - 1.0))
        }
    }

    /// `1/p`, zero for `p = ∞`.
    pub fn reciprocal(&self) -> f64 {
        if self.is_infinite() {
            0.0
        } else {
            1.0 / self.0
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Exponent {
    type Err = PhaseSpaceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if matches!(t, "inf" | "infinity" | "Inf" | "∞") {
            return Ok(Exponent::INFINITY);
        }
        if let Some((a, b)) = t.split_once('/') {
            let (a, b): (f64, f64) = (
                a.trim()
                    .parse()
                    .map_err(|_| PhaseSpaceError::InvalidExponent(f64::NAN))?,
                b.trim()
                    .parse()
                    .map_err(|_| PhaseSpaceError::InvalidExponent(f64::NAN))?,
            );
            return Exponent::new(a / b);
        }
        let v: f64 = t.parse().map_err(|_| PhaseSpaceError::InvalidExponent(f64::NAN))?;
        Exponent::new(v)
    }
}

impl TryFrom<f64> for Exponent {
    type Error = PhaseSpaceError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Exponent::new(v)
    }
}

/// Which variable carries the outer norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Outer over x: the `W^{p,q}` functional.
    X,
    /// Outer over ξ: the `M^{p,q}` functional.
    Xi,
}

/// `(Σ |v|^p · weight)^{1/p}`, or `max |v|` for `p = ∞`.
pub(crate) fn lp_sum(magnitudes: impl Iterator<Item = f64>, weight: f64, p: Exponent) -> f64 {
    if p.is_infinite() {
        magnitudes.fold(0.0, f64::max)
    } else if p.value() == 2.0 {
        (magnitudes.map(|m| m * m).sum::<f64>() * weight).sqrt()
    } else if p.value() == 1.0 {
        magnitudes.sum::<f64>() * weight
    } else {
        let e = p.value();
        (magnitudes.map(|m| m.powf(e)).sum::<f64>() * weight).powf(1.0 / e)
    }
}

/// Mixed Lebesgue norm: inner `L^p`, outer `L^q` over the `outer` variable.
pub fn mixed_norm(f: &PhaseArray, p: Exponent, q: Exponent, outer: Axis) -> f64 {
    let lat = f.lattice();
    let nx = lat.len_x();
    let nxi = lat.len_xi();
    let v = f.values();
    match outer {
        Axis::X => {
            let inner: Vec<f64> = (0..nx)
                .map(|ix| lp_sum(v[ix * nxi..(ix + 1) * nxi].iter().map(|c| c.norm()), lat.xi_weight(), p))
                .collect();
            lp_sum(inner.into_iter(), lat.x_weight(), q)
        }
        Axis::Xi => {
            let inner: Vec<f64> = (0..nxi)
                .map(|j| lp_sum((0..nx).map(|ix| v[ix * nxi + j].norm()), lat.x_weight(), p))
                .collect();
            lp_sum(inner.into_iter(), lat.xi_weight(), q)
        }
    }
}

/// `‖f‖_{L^p}` as a grid Riemann sum (max for `p = ∞`).
pub fn lp_norm(f: &SampledFunction, p: Exponent) -> f64 {
    lp_sum(f.values().iter().map(|c| c.norm()), f.grid().cell(), p)
}

/// `‖f‖_{W^{p,q}}`: inner over ξ, outer over x.
pub fn wiener_amalgam_norm(
    f: &SampledFunction,
    window: &Window,
    lat: &PhaseLattice,
    p: Exponent,
    q: Exponent,
) -> Result<f64, PhaseSpaceError> {
    Ok(mixed_norm(&stft(f, window, lat)?, p, q, Axis::X))
}

/// `‖f‖_{M^{p,q}}`: inner over x, outer over ξ.
pub fn modulation_norm(
    f: &SampledFunction,
    window: &Window,
    lat: &PhaseLattice,
    p: Exponent,
    q: Exponent,
) -> Result<f64, PhaseSpaceError> {
    Ok(mixed_norm(&stft(f, window, lat)?, p, q, Axis::Xi))
}

/// `‖⟨x⟩^{-N} f‖_{H^{-N}}` with `‖u‖_{H^s} = (2π)^{-d/2} ‖⟨ξ⟩^s Fu‖₂`.
pub fn weighted_sobolev_norm(f: &SampledFunction, order: u32) -> f64 {
    if order == 0 {
        return f.norm();
    }
    let n = order as i32;
    let damped = f.multiplied_by(|x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Complex64::new((1.0 + r2).powf(-(n as f64) / 2.0), 0.0)
    });
    let spectrum = fourier_transform(&damped);
    let dual = *spectrum.grid();
    let d = dual.dim();
    let s: f64 = spectrum
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = dual.sample_point(i);
            let r2: f64 = p[..d].iter().map(|v| v * v).sum();
            v.norm_sqr() * (1.0 + r2).powi(-n)
        })
        .sum();
    (s * dual.cell() / (2.0 * PI).powi(d as i32)).sqrt()
}

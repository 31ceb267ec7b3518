use num_complex::Complex64;

use super::fourier::translate;
use super::grid::{Grid, SampledFunction};
use super::lattice::{PhaseArray, PhaseLattice};
use super::window::Window;
use super::PhaseSpaceError;
use crate::par;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `table[k * m + j] = exp(-i y_k ξ_j)` for every grid coordinate and lattice frequency.
fn twiddles(grid: &Grid, freqs: &[f64]) -> Vec<Complex64> {
    let m = freqs.len();
    let mut t = Vec::with_capacity(grid.points() * m);
    for k in 0..grid.points() {
        let y = grid.coordinate(k);
        t.extend(freqs.iter().map(|xi| Complex64::from_polar(1.0, -y * xi)));
    }
    t
}

/// Grid indices around the centre of a translated window, one axis.
fn support_indices(grid: &Grid, centre: f64, radius: usize) -> Vec<usize> {
    let n = grid.points();
    let c = grid.nearest_index(centre) as i64;
    if 2 * radius + 1 >= n {
        let start = c - (n / 2) as i64;
        (0..n as i64)
            .map(|o| (start + o).rem_euclid(n as i64) as usize)
            .collect()
    } else {
        let r = radius as i64;
        (-r..=r).map(|o| (c + o).rem_euclid(n as i64) as usize).collect()
    }
}

fn support_radius(grid: &Grid, window: &Window) -> usize {
    (window.reach() / grid.spacing()).ceil() as usize + 1
}

fn check_inputs(grid: &Grid, window: &Window, lat: &PhaseLattice) -> Result<(), PhaseSpaceError> {
    if !window.grid().same_as(grid) {
        return Err(PhaseSpaceError::GridMismatch);
    }
    if !window.is_normalized() {
        return Err(PhaseSpaceError::UnnormalizedWindow);
    }
    lat.check_within(grid)
}

/// `V_g f(z) = ⟨f, π(z)g⟩` on every lattice point, one windowed transform per x-slice.
pub fn stft(f: &SampledFunction, window: &Window, lat: &PhaseLattice) -> Result<PhaseArray, PhaseSpaceError> {
    let grid = *f.grid();
    check_inputs(&grid, window, lat)?;
    let n = grid.points();
    let m = lat.xi_nodes().len();
    let table = twiddles(&grid, lat.xi_nodes());
    let radius = support_radius(&grid, window);
    let cell = grid.cell();
    let fv = f.values();

    let slices: Vec<Vec<Complex64>> = par::map_range(lat.len_x(), |ix| {
        let x = lat.x_point(ix);
        let gx = translate(window.base(), &x[..grid.dim()]);
        let gv = gx.values();
        match grid.dim() {
            1 => {
                let mut out = vec![ZERO; m];
                for k in support_indices(&grid, x[0], radius) {
                    let p = fv[k] * gv[k].conj();
                    if p == ZERO {
                        continue;
                    }
                    let row = &table[k * m..(k + 1) * m];
                    for (o, t) in out.iter_mut().zip(row) {
                        *o += p * t;
                    }
                }
                out.iter_mut().for_each(|v| *v *= cell);
                out
            }
            _ => {
                let rows = support_indices(&grid, x[0], radius);
                let cols = support_indices(&grid, x[1], radius);
                let mut partial = vec![ZERO; rows.len() * m];
                for (a, &k1) in rows.iter().enumerate() {
                    let acc = &mut partial[a * m..(a + 1) * m];
                    for &k2 in &cols {
                        let idx = k1 * n + k2;
                        let p = fv[idx] * gv[idx].conj();
                        if p == ZERO {
                            continue;
                        }
                        let row = &table[k2 * m..(k2 + 1) * m];
                        for (o, t) in acc.iter_mut().zip(row) {
                            *o += p * t;
                        }
                    }
                }
                let mut out = vec![ZERO; m * m];
                for (a, &k1) in rows.iter().enumerate() {
                    let acc = &partial[a * m..(a + 1) * m];
                    for j1 in 0..m {
                        let t = table[k1 * m + j1];
                        let dst = &mut out[j1 * m..(j1 + 1) * m];
                        for (o, q) in dst.iter_mut().zip(acc) {
                            *o += t * q;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= cell);
                out
            }
        }
    });
    PhaseArray::new(lat.clone(), slices.concat())
}

/// `Σ_z F(z) π(z)g · δx^d δξ^d`.
pub fn stft_inverse(
    coefficients: &PhaseArray,
    window: &Window,
    lat: &PhaseLattice,
) -> Result<SampledFunction, PhaseSpaceError> {
    let grid = *window.grid();
    check_inputs(&grid, window, lat)?;
    if coefficients.lattice() != lat {
        return Err(PhaseSpaceError::InvalidLattice(
            "coefficients were computed on a different lattice".into(),
        ));
    }
    let n = grid.points();
    let m = lat.xi_nodes().len();
    let nxi = lat.len_xi();
    let table = twiddles(&grid, lat.xi_nodes());
    let radius = support_radius(&grid, window);
    let weight = lat.cell_weight();
    let values = coefficients.values();

    // Each slice yields sparse contributions; they are summed in slice order.
    let contributions: Vec<Vec<(usize, Complex64)>> = par::map_range(lat.len_x(), |ix| {
        let coeffs = &values[ix * nxi..(ix + 1) * nxi];
        if coeffs.iter().all(|c| *c == ZERO) {
            return Vec::new();
        }
        let x = lat.x_point(ix);
        let gx = translate(window.base(), &x[..grid.dim()]);
        let gv = gx.values();
        match grid.dim() {
            1 => support_indices(&grid, x[0], radius)
                .into_iter()
                .map(|k| {
                    let row = &table[k * m..(k + 1) * m];
                    let s: Complex64 = coeffs.iter().zip(row).map(|(c, t)| c * t.conj()).sum();
                    (k, gv[k] * s * weight)
                })
                .collect(),
            _ => {
                let rows = support_indices(&grid, x[0], radius);
                let cols = support_indices(&grid, x[1], radius);
                // r[j1][b] = Σ_{j2} F[j1, j2] conj(T[k2_b, j2])
                let mut r = vec![ZERO; m * cols.len()];
                for j1 in 0..m {
                    let fr = &coeffs[j1 * m..(j1 + 1) * m];
                    for (b, &k2) in cols.iter().enumerate() {
                        let row = &table[k2 * m..(k2 + 1) * m];
                        r[j1 * cols.len() + b] = fr.iter().zip(row).map(|(c, t)| c * t.conj()).sum();
                    }
                }
                let mut out = Vec::with_capacity(rows.len() * cols.len());
                for &k1 in &rows {
                    let row = &table[k1 * m..(k1 + 1) * m];
                    for (b, &k2) in cols.iter().enumerate() {
                        let s: Complex64 = (0..m).map(|j1| row[j1].conj() * r[j1 * cols.len() + b]).sum();
                        let idx = k1 * n + k2;
                        out.push((idx, gv[idx] * s * weight));
                    }
                }
                out
            }
        }
    });
    let mut acc = vec![ZERO; grid.len()];
    for slice in contributions {
        for (k, v) in slice {
            acc[k] += v;
        }
    }
    Ok(SampledFunction::from_raw(grid, acc))
}

//! Flat binary layout for phase arrays and dense matrices, and a minimal CSV
//! table writer.
//!
//! Binary files start with a text header of `key value` lines terminated by a
//! line `end`, followed by row-major little-endian `(re, im)` f64 pairs.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::grid::Grid;
use super::lattice::{PhaseArray, PhaseLattice};
use super::PhaseSpaceError;

const MAGIC: &str = "PHASELAB 1";

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHeader {
    pub kind: String,
    pub dim: usize,
    pub points: usize,
    pub half_extent: f64,
    pub step_x: f64,
    pub step_xi: f64,
    pub shape: Vec<usize>,
    /// First node along x and along ξ (phase arrays only).
    pub origin: [f64; 2],
}

impl BinaryHeader {
    fn render(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(|s| s.to_string()).collect();
        format!(
            "{MAGIC}\nkind {}\nd {}\nN {}\nL {}\ndx {}\ndxi {}\nshape {}\norigin {} {}\nend\n",
            self.kind,
            self.dim,
            self.points,
            self.half_extent,
            self.step_x,
            self.step_xi,
            shape.join(" "),
            self.origin[0],
            self.origin[1],
        )
    }

    fn parse(lines: &[String]) -> Result<Self, PhaseSpaceError> {
        let bad = |m: &str| PhaseSpaceError::Format(m.to_string());
        if lines.first().map(|s| s.as_str()) != Some(MAGIC) {
            return Err(bad("missing magic line"));
        }
        let mut h = BinaryHeader {
            kind: String::new(),
            dim: 0,
            points: 0,
            half_extent: 0.0,
            step_x: 0.0,
            step_xi: 0.0,
            shape: Vec::new(),
            origin: [0.0; 2],
        };
        for line in &lines[1..] {
            let (key, rest) = line.split_once(' ').ok_or_else(|| bad(line))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            match key {
                "kind" => h.kind = rest.to_string(),
                "d" => h.dim = rest.parse().map_err(|_| bad(line))?,
                "N" => h.points = rest.parse().map_err(|_| bad(line))?,
                "L" => h.half_extent = num(rest)?,
                "dx" => h.step_x = num(rest)?,
                "dxi" => h.step_xi = num(rest)?,
                "shape" => {
                    h.shape = rest
                        .split_whitespace()
                        .map(|s| s.parse().map_err(|_| bad(line)))
                        .collect::<Result<_, _>>()?
                }
                "origin" => {
                    let v: Vec<f64> = rest.split_whitespace().map(num).collect::<Result<_, _>>()?;
                    if v.len() != 2 {
                        return Err(bad(line));
                    }
                    h.origin = [v[0], v[1]];
                }
                _ => return Err(bad(line)),
            }
        }
        Ok(h)
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn write_binary(path: &Path, header: &BinaryHeader, values: &[Complex64]) -> Result<(), PhaseSpaceError> {
    if values.len() != header.element_count() {
        return Err(PhaseSpaceError::Length {
            expected: header.element_count(),
            found: values.len(),
        });
    }
    let mut buf = header.render().into_bytes();
    buf.reserve(values.len() * 16);
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<(BinaryHeader, Vec<Complex64>), PhaseSpaceError> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(PhaseSpaceError::Format("unterminated header".into()));
        }
        let line = line.trim_end_matches('\n').to_string();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let header = BinaryHeader::parse(&lines)?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let count = header.element_count();
    if bytes.len() != count * 16 {
        return Err(PhaseSpaceError::Length {
            expected: count * 16,
            found: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    Ok((header, values))
}

pub fn save_phase_array(path: &Path, grid: &Grid, array: &PhaseArray) -> Result<(), PhaseSpaceError> {
    let lat = array.lattice();
    let header = BinaryHeader {
        kind: "phase-array".into(),
        dim: lat.dim(),
        points: grid.points(),
        half_extent: grid.half_extent(),
        step_x: lat.step_x(),
        step_xi: lat.step_xi(),
        shape: vec![lat.len_x(), lat.len_xi()],
        origin: [lat.x_nodes()[0], lat.xi_nodes()[0]],
    };
    write_binary(path, &header, array.values())
}

pub fn load_phase_array(path: &Path) -> Result<(Grid, PhaseArray), PhaseSpaceError> {
    let (h, values) = read_binary(path)?;
    if h.kind != "phase-array" || h.shape.len() != 2 {
        return Err(PhaseSpaceError::Format(format!("not a phase array: kind {}", h.kind)));
    }
    let grid = Grid::new(h.dim, h.half_extent, h.points)?;
    let per_axis = |count: usize| -> Result<usize, PhaseSpaceError> {
        let n = if h.dim == 1 {
            count
        } else {
            (count as f64).sqrt().round() as usize
        };
        if n.pow(h.dim as u32) != count {
            return Err(PhaseSpaceError::Format("shape inconsistent with dimension".into()));
        }
        Ok(n)
    };
    let nx = per_axis(h.shape[0])?;
    let nxi = per_axis(h.shape[1])?;
    let x_nodes = (0..nx).map(|i| h.origin[0] + i as f64 * h.step_x).collect();
    let xi_nodes = (0..nxi).map(|i| h.origin[1] + i as f64 * h.step_xi).collect();
    let lat = PhaseLattice::from_nodes(h.dim, h.step_x, x_nodes, h.step_xi, xi_nodes)?;
    Ok((grid, PhaseArray::new(lat, values)?))
}

/// Format a float for CSV output: fixed 12-digit scientific notation.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.12e}")
    }
}

/// A CSV table: comma-separated, header row, LF line endings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| fmt_float(*v)).collect());
    }

    pub fn push_cells(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.render().as_bytes())
    }
}

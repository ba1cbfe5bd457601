//! Ring parameters and the discrete momentum x periodic angle grid.
//!
//! Momentum rows are `p_n = n hbar / 2` for `n` in `[-n_max, n_max]`; the
//! half-integer spacing comes from the `2 pi` angular period. Rows of the
//! physical (diagonal) sector sit at even `n`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, HBAR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingParams {
    pub mass: f64,
    pub radius: f64,
    pub charge: f64,
    pub flux_bar: f64,
}

impl Default for RingParams {
    fn default() -> Self {
        Self {
            mass: 0.5,
            radius: 1.0,
            charge: -1.0,
            flux_bar: 0.0,
        }
    }
}

impl RingParams {
    pub fn new(mass: f64, radius: f64, charge: f64, flux_bar: f64) -> Result<Self> {
        let r = Self {
            mass,
            radius,
            charge,
            flux_bar,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.radius > 0.0) {
            return Err(Error::InvalidArgument(
                "ring mass and radius must be positive".into(),
            ));
        }
        if self.charge == 0.0 || !self.charge.is_finite() || !self.flux_bar.is_finite() {
            return Err(Error::InvalidArgument(
                "ring charge must be finite and nonzero".into(),
            ));
        }
        Ok(())
    }

    pub fn with_flux(&self, flux_bar: f64) -> Self {
        Self { flux_bar, ..*self }
    }

    pub fn inertia(&self) -> f64 {
        self.mass * self.radius * self.radius
    }

    pub fn omega0(&self) -> f64 {
        HBAR / (2.0 * self.inertia())
    }

    /// `Phi_0 = 2 pi hbar / q`.
    pub fn flux_quantum(&self) -> f64 {
        2.0 * PI * HBAR / self.charge
    }

    /// Azimuthal vector potential on the ring, `Phi / (2 pi r0)`.
    pub fn vector_potential(&self) -> f64 {
        self.flux_bar * self.flux_quantum() / (2.0 * PI * self.radius)
    }

    /// `q r0 A`. Works out to `+hbar * flux_bar` whatever the sign of `q`.
    pub fn gauge_momentum(&self) -> f64 {
        self.charge * self.radius * self.vector_potential()
    }

    /// Angular velocity `(p - q r0 A) / I_S` of a momentum value.
    pub fn velocity(&self, p: f64) -> f64 {
        (p - self.gauge_momentum()) / self.inertia()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingGrid {
    pub n_theta: usize,
    pub n_max: usize,
}

pub fn make_grid(n_theta: usize, n_max: usize) -> Result<RingGrid> {
    if n_theta < 4 || n_max < 1 {
        return Err(Error::InvalidArgument(format!(
            "grid needs n_theta >= 4 and n_max >= 1, got ({n_theta}, {n_max})"
        )));
    }
    Ok(RingGrid { n_theta, n_max })
}

impl RingGrid {
    pub fn rows(&self) -> usize {
        2 * self.n_max + 1
    }

    pub fn len(&self) -> usize {
        self.rows() * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    pub fn dp(&self) -> f64 {
        HBAR / 2.0
    }

    /// Momentum index of a row.
    pub fn n_of(&self, row: usize) -> i64 {
        row as i64 - self.n_max as i64
    }

    pub fn row_of(&self, n: i64) -> Option<usize> {
        let r = n + self.n_max as i64;
        (0..self.rows() as i64).contains(&r).then_some(r as usize)
    }

    pub fn p(&self, row: usize) -> f64 {
        self.n_of(row) as f64 * self.dp()
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta()
    }

    pub fn zeros(&self) -> WignerField {
        WignerField {
            values: Array2::zeros((self.rows(), self.n_theta)),
            grid: *self,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    pub values: Array2<f64>,
    pub grid: RingGrid,
}

impl WignerField {
    pub fn from_values(grid: RingGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.rows(), grid.n_theta) {
            return Err(Error::Shape(format!(
                "field {:?} does not match grid {}x{}",
                values.dim(),
                grid.rows(),
                grid.n_theta
            )));
        }
        Ok(Self { values, grid })
    }

    pub fn from_fn(grid: RingGrid, mut f: impl FnMut(i64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.rows(), grid.n_theta), |(r, j)| {
            f(grid.n_of(r), grid.theta(j))
        });
        Self { values, grid }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Value at momentum index `n`, zero outside the grid.
    pub fn at(&self, n: i64, j: usize) -> f64 {
        self.grid.row_of(n).map_or(0.0, |r| self.values[(r, j)])
    }
}

/// `dp * sum_n integral dtheta W`.
pub fn trace(w: &WignerField) -> f64 {
    w.grid.dp() * w.grid.dtheta() * w.values.sum()
}

/// Centered index difference `(W(p_{n+1}) - W(p_{n-1})) / hbar`, zero outside.
pub fn delta_p(w: &WignerField) -> WignerField {
    let mut out = w.grid.zeros();
    delta_p_into(&w.values, &mut out.values, 1.0);
    out
}

/// `out += scale * delta_p(w)` on raw arrays.
pub(crate) fn delta_p_into(w: &Array2<f64>, out: &mut Array2<f64>, scale: f64) {
    let rows = w.nrows();
    let s = scale / HBAR;
    for r in 0..rows {
        let mut o = out.row_mut(r);
        if r + 1 < rows {
            o.scaled_add(s, &w.row(r + 1));
        }
        if r > 0 {
            o.scaled_add(-s, &w.row(r - 1));
        }
    }
}

/// Periodic second-order central difference in theta.
pub fn dtheta_deriv(w: &WignerField) -> WignerField {
    let mut out = w.grid.zeros();
    dtheta_into(&w.values, &mut out.values, 1.0, w.grid.dtheta());
    out
}

pub(crate) fn dtheta_into(w: &Array2<f64>, out: &mut Array2<f64>, scale: f64, dtheta: f64) {
    let nt = w.ncols();
    let c = scale / (2.0 * dtheta);
    Zip::from(out.rows_mut())
        .and(w.rows())
        .for_each(|mut o, row| {
            for j in 0..nt {
                let jp = if j + 1 == nt { 0 } else { j + 1 };
                let jm = if j == 0 { nt - 1 } else { j - 1 };
                o[j] += c * (row[jp] - row[jm]);
            }
        });
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Sidecar {
    n_theta: usize,
    n_max: usize,
    dtheta: f64,
    dp: f64,
    hbar: f64,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `n,theta_index,value` rows plus a JSON sidecar next to the CSV.
/// Values use the shortest decimal form that parses back to the same bits.
pub fn write_snapshot(w: &WignerField, csv: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(csv)?);
    writeln!(out, "n,theta_index,value")?;
    for r in 0..w.grid.rows() {
        let n = w.grid.n_of(r);
        for j in 0..w.grid.n_theta {
            writeln!(out, "{},{},{}", n, j, w.values[(r, j)])?;
        }
    }
    out.flush()?;
    write_grid_sidecar(&w.grid, &sidecar_path(csv))
}

pub fn write_grid_sidecar(grid: &RingGrid, path: &Path) -> Result<()> {
    let side = Sidecar {
        n_theta: grid.n_theta,
        n_max: grid.n_max,
        dtheta: grid.dtheta(),
        dp: grid.dp(),
        hbar: HBAR,
    };
    std::fs::write(path, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_grid_sidecar(path: &Path) -> Result<RingGrid> {
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    make_grid(side.n_theta, side.n_max)
}

pub fn read_snapshot(csv: &Path) -> Result<WignerField> {
    let grid = read_grid_sidecar(&sidecar_path(csv))?;
    read_snapshot_on(csv, grid)
}

pub(crate) fn read_snapshot_on(csv: &Path, grid: RingGrid) -> Result<WignerField> {
    let mut w = grid.zeros();
    let mut seen = 0usize;
    let reader = BufReader::new(File::open(csv)?);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "n,theta_index,value" {
                return Err(Error::Parse(format!(
                    "{}: unexpected header {line:?}",
                    csv.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            Error::Parse(format!(
                "{}:{}: malformed row {line:?}",
                csv.display(),
                lineno + 1
            ))
        };
        let mut it = line.split(',');
        let n: i64 = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let j: usize = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let v: f64 = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let r = grid
            .row_of(n)
            .filter(|_| j < grid.n_theta)
            .ok_or_else(bad)?;
        w.values[(r, j)] = v;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::Parse(format!(
            "{}: {seen} rows, expected {}",
            csv.display(),
            grid.len()
        )));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn paper_grid_shape() {
        let g = make_grid(64, 31).unwrap();
        assert_eq!(g.zeros().shape(), (63, 64));
        assert_eq!(make_grid(4, 1).unwrap().zeros().shape(), (3, 4));
        assert_eq!(g.dp(), 0.5);
        assert!(make_grid(3, 1).is_err());
        assert!(make_grid(8, 0).is_err());
    }

    #[test]
    fn ring_derived_quantities() {
        let r = RingParams::default().with_flux(0.3);
        assert_eq!(r.inertia(), 0.5);
        assert_eq!(r.omega0(), 1.0);
        assert_relative_eq!(r.flux_quantum(), -2.0 * PI);
        assert_relative_eq!(r.gauge_momentum(), 0.3, max_relative = 1e-15);
        let flipped = RingParams { charge: 1.0, ..r };
        assert_relative_eq!(flipped.gauge_momentum(), 0.3, max_relative = 1e-15);
    }

    #[test]
    fn trace_of_uniform_field() {
        let g = make_grid(16, 5).unwrap();
        let c = 1.0 / (g.dp() * g.rows() as f64 * 2.0 * PI);
        let w = WignerField::from_fn(g, |_, _| c);
        assert_relative_eq!(trace(&w), 1.0, max_relative = 1e-14);
        assert_eq!(trace(&g.zeros()), 0.0);
    }

    #[test]
    fn delta_p_linear_and_boundary() {
        let g = make_grid(4, 3).unwrap();
        let w = WignerField::from_fn(g, |n, _| n as f64 * g.dp());
        let d = delta_p(&w);
        for r in 1..g.rows() - 1 {
            assert_relative_eq!(d.values[(r, 0)], 1.0, max_relative = 1e-15);
        }
        // top row sees only its lower neighbour
        let top = g.rows() - 1;
        assert_relative_eq!(d.values[(top, 2)], -w.values[(top - 1, 2)]);
        let c = delta_p(&WignerField::from_fn(g, |_, _| 2.0));
        assert_eq!(c.values[(3, 1)], 0.0);
    }

    #[test]
    fn dtheta_converges_at_second_order() {
        let err = |nt: usize| {
            let g = make_grid(nt, 1).unwrap();
            let d = dtheta_deriv(&WignerField::from_fn(g, |_, t| t.sin()));
            (0..nt)
                .map(|j| (d.values[(1, j)] - g.theta(j).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
        let g = make_grid(8, 2).unwrap();
        let d = dtheta_deriv(&WignerField::from_fn(g, |_, _| 3.0));
        assert!(d.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(8, 3).unwrap();
        let w = WignerField::from_fn(g, |n, t| (n as f64 * 0.37 + t).sin() / 3.0 + 1e-300);
        let path = dir.path().join("w.csv");
        write_snapshot(&w, &path).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back.grid, g);
        for (a, b) in w.values.iter().zip(back.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

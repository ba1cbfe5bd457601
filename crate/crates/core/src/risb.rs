//! Rotationally invariant system-bath ring: Liouvillian, the hierarchy
//! generator on the discrete Wigner grid, and its Markovian reduction.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathSpec, KernelTerms, PadeDecomposition};
use crate::grid::{self, RingGrid, RingParams, WignerField};
use crate::hierarchy::{HierarchySpace, ModeLayout};
use crate::{Error, Result, HBAR};

/// Fourier coefficients `u_k^(c)`, `u_k^(s)` of the ring potential, `k = 1..`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub cos_coeffs: Vec<f64>,
    pub sin_coeffs: Vec<f64>,
}

impl PotentialSpec {
    pub fn k_max(&self) -> usize {
        self.cos_coeffs.len().max(self.sin_coeffs.len())
    }

    pub fn is_zero(&self) -> bool {
        self.cos_coeffs
            .iter()
            .chain(&self.sin_coeffs)
            .all(|c| *c == 0.0)
    }

    pub fn validate(&self, grid: &RingGrid) -> Result<()> {
        if self.k_max() > grid.n_max {
            return Err(Error::InvalidArgument(format!(
                "potential harmonic {} exceeds n_max {}",
                self.k_max(),
                grid.n_max
            )));
        }
        if self
            .cos_coeffs
            .iter()
            .chain(&self.sin_coeffs)
            .any(|c| !c.is_finite())
        {
            return Err(Error::InvalidArgument(
                "potential coefficients must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One field per hierarchy index, index 0 being the physical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AdoStack {
    pub grid: RingGrid,
    pub data: Array3<f64>,
}

impl AdoStack {
    pub fn zeros(grid: RingGrid, n_ado: usize) -> Self {
        Self {
            grid,
            data: Array3::zeros((n_ado, grid.rows(), grid.n_theta)),
        }
    }

    pub fn from_primary(w: &WignerField, n_ado: usize) -> Self {
        let mut s = Self::zeros(w.grid, n_ado);
        s.data.index_axis_mut(Axis(0), 0).assign(&w.values);
        s
    }

    pub fn len(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn field(&self, i: usize) -> WignerField {
        WignerField {
            values: self.data.index_axis(Axis(0), i).to_owned(),
            grid: self.grid,
        }
    }

    pub fn primary(&self) -> WignerField {
        self.field(0)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("stack is contiguous")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("stack is contiguous")
    }

    pub fn from_flat(grid: RingGrid, flat: Vec<f64>) -> Result<Self> {
        let block = grid.len();
        if !flat.len().is_multiple_of(block) {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of {block}-point fields",
                flat.len()
            )));
        }
        let n = flat.len() / block;
        let data = Array3::from_shape_vec((n, grid.rows(), grid.n_theta), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self { grid, data })
    }
}

/// `-L_qm W`: drift `-(p_n - q r0 A)/I_S d/dtheta W` plus the potential term.
pub fn liouvillian_apply(
    w: &WignerField,
    ring: &RingParams,
    pot: &PotentialSpec,
) -> Result<WignerField> {
    pot.validate(&w.grid)?;
    let mut out = w.grid.zeros();
    neg_liouvillian_into(
        w.values.view(),
        out.values.view_mut(),
        &w.grid,
        ring,
        pot,
        &Trig::new(&w.grid),
    );
    Ok(out)
}

struct Trig {
    sin: Vec<f64>,
    cos: Vec<f64>,
}

impl Trig {
    fn new(grid: &RingGrid) -> Self {
        let th: Vec<f64> = (0..grid.n_theta).map(|j| grid.theta(j)).collect();
        Self {
            sin: th.iter().map(|t| t.sin()).collect(),
            cos: th.iter().map(|t| t.cos()).collect(),
        }
    }
}

fn neg_liouvillian_into(
    w: ArrayView2<f64>,
    mut out: ArrayViewMut2<f64>,
    grid: &RingGrid,
    ring: &RingParams,
    pot: &PotentialSpec,
    _trig: &Trig,
) {
    let nt = grid.n_theta;
    let inv2dth = 1.0 / (2.0 * grid.dtheta());
    for r in 0..grid.rows() {
        let v = ring.velocity(grid.p(r));
        let c = -v * inv2dth;
        let row = w.row(r);
        let mut o = out.row_mut(r);
        for j in 0..nt {
            let jp = if j + 1 == nt { 0 } else { j + 1 };
            let jm = if j == 0 { nt - 1 } else { j - 1 };
            o[j] += c * (row[jp] - row[jm]);
        }
    }
    if pot.is_zero() {
        return;
    }
    let rows = grid.rows() as i64;
    for k in 1..=pot.k_max() {
        let uc = pot.cos_coeffs.get(k - 1).copied().unwrap_or(0.0);
        let us = pot.sin_coeffs.get(k - 1).copied().unwrap_or(0.0);
        let amp: Vec<f64> = (0..nt)
            .map(|j| {
                let kt = k as f64 * grid.theta(j);
                -(uc * kt.sin() - us * kt.cos()) / HBAR
            })
            .collect();
        for r in 0..rows {
            let up = r + k as i64;
            let dn = r - k as i64;
            for j in 0..nt {
                let a = if up < rows { w[(up as usize, j)] } else { 0.0 };
                let b = if dn >= 0 { w[(dn as usize, j)] } else { 0.0 };
                out[(r as usize, j)] += amp[j] * (a - b);
            }
        }
    }
}

/// Everything needed to evaluate the ring hierarchy right-hand side.
pub struct RisbHeom {
    pub ring: RingParams,
    pub grid: RingGrid,
    pub bath: BathSpec,
    pub pade: PadeDecomposition,
    pub pot: PotentialSpec,
    pub hier: HierarchySpace,
    pub layout: ModeLayout,
    pub terms: KernelTerms,
    rates: Vec<f64>,
    trig: Trig,
}

impl RisbHeom {
    pub fn new(
        ring: RingParams,
        grid: RingGrid,
        bath: BathSpec,
        pade: PadeDecomposition,
        pot: PotentialSpec,
        n_trunc: usize,
    ) -> Result<Self> {
        ring.validate()?;
        bath.validate()?;
        pot.validate(&grid)?;
        let layout = ModeLayout {
            k_terms: pade.k(),
            axes: 2,
        };
        let hier = HierarchySpace::new(layout.n_modes(), n_trunc, crate::hierarchy::DEFAULT_LIMIT)?;
        let terms = KernelTerms::new(&bath, &pade);
        let rates = (0..layout.n_modes())
            .map(|m| terms.nu[layout.split(m).1])
            .collect();
        let trig = Trig::new(&grid);
        Ok(Self {
            ring,
            grid,
            bath,
            pade,
            pot,
            hier,
            layout,
            terms,
            rates,
            trig,
        })
    }

    pub fn n_ado(&self) -> usize {
        self.hier.len()
    }

    pub fn state_len(&self) -> usize {
        self.n_ado() * self.grid.len()
    }

    /// `f_x = -sin`, `f_y = cos`.
    fn f(&self, axis: usize, j: usize) -> f64 {
        if axis == 0 {
            -self.trig.sin[j]
        } else {
            self.trig.cos[j]
        }
    }

    /// `g_x = cos`, `g_y = sin`.
    fn g(&self, axis: usize, j: usize) -> f64 {
        if axis == 0 {
            self.trig.cos[j]
        } else {
            self.trig.sin[j]
        }
    }

    /// Flat right-hand side; `flux_bar` overrides the ring's static flux.
    pub fn apply_with_flux(&self, flux_bar: f64, input: &[f64], out: &mut [f64]) {
        let block = self.grid.len();
        let (rows, nt) = (self.grid.rows(), self.grid.n_theta);
        let ring = self.ring.with_flux(flux_bar);
        let r0 = ring.radius;
        let s0 = self.bath.eta * self.bath.gamma.powi(2) * r0 / 2.0;
        let kp1 = self.layout.k_terms + 1;
        out.par_chunks_mut(block).enumerate().for_each(|(i, o)| {
            let mut o = ArrayViewMut2::from_shape((rows, nt), o).unwrap();
            o.fill(0.0);
            let wi =
                ArrayView2::from_shape((rows, nt), &input[i * block..(i + 1) * block]).unwrap();
            neg_liouvillian_into(wi, o.view_mut(), &self.grid, &ring, &self.pot, &self.trig);
            let decay = self.hier.decay(i, &self.rates);
            if decay != 0.0 {
                o.scaled_add(-decay, &wi);
            }
            let counts = self.hier.counts(i);
            let mut x = Array2::<f64>::zeros((rows, nt));
            let mut u = Array2::<f64>::zeros((rows, nt));
            for axis in 0..2 {
                x.fill(0.0);
                u.fill(0.0);
                let mut any_x = false;
                let mut any_u = false;
                for k in 0..kp1 {
                    let m = self.layout.mode(axis, k);
                    if let Some(j) = self.hier.raise(i, m) {
                        let wj =
                            ArrayView2::from_shape((rows, nt), &input[j * block..(j + 1) * block])
                                .unwrap();
                        x += &wj;
                        any_x = true;
                    }
                    if let Some(j) = self.hier.lower(i, m) {
                        let nk = counts[m] as f64;
                        let wj =
                            ArrayView2::from_shape((rows, nt), &input[j * block..(j + 1) * block])
                                .unwrap();
                        x.scaled_add(nk * self.terms.coef[k], &wj);
                        any_x = true;
                        if k == 0 {
                            u.scaled_add(nk, &wj);
                            any_u = true;
                        }
                    }
                }
                if !(any_x || any_u) {
                    continue;
                }
                for r in 0..rows {
                    for jt in 0..nt {
                        let mut acc = 0.0;
                        let up = r + 1 < rows;
                        let dn = r > 0;
                        if any_x {
                            let d = if up { x[(r + 1, jt)] } else { 0.0 }
                                - if dn { x[(r - 1, jt)] } else { 0.0 };
                            acc += r0 * self.f(axis, jt) * d / HBAR;
                        }
                        if any_u {
                            let s = if up { u[(r + 1, jt)] } else { 0.0 }
                                + if dn { u[(r - 1, jt)] } else { 0.0 };
                            acc -= s0 * self.g(axis, jt) * s;
                        }
                        o[(r, jt)] += acc;
                    }
                }
            }
        });
    }

    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        self.apply_with_flux(self.ring.flux_bar, input, out)
    }
}

/// Hierarchy right-hand side on a full stack. Indices above the truncation
/// are taken as zero.
pub fn heom_rhs(stack: &AdoStack, gen: &RisbHeom) -> Result<AdoStack> {
    if stack.grid != gen.grid || stack.len() != gen.n_ado() {
        return Err(Error::Shape(format!(
            "stack has {} fields on {:?}, generator expects {} on {:?}",
            stack.len(),
            stack.grid,
            gen.n_ado(),
            gen.grid
        )));
    }
    let mut out = AdoStack::zeros(stack.grid, stack.len());
    gen.apply(stack.as_slice(), out.as_slice_mut());
    Ok(out)
}

/// `beta' = beta / (1 - beta hbar^2 / (2 I_S))`.
pub fn effective_beta(ring: &RingParams, beta: f64) -> Result<f64> {
    let ratio = beta * HBAR * HBAR / (2.0 * ring.inertia());
    if ratio >= 1.0 {
        return Err(Error::MarkovianInvalid { ratio });
    }
    Ok(beta / (1.0 - ratio))
}

/// Markovian ring generator with the effective temperature.
#[derive(Debug, Clone)]
pub struct MarkovianRisb {
    pub ring: RingParams,
    pub grid: RingGrid,
    pub bath: BathSpec,
    pub pot: PotentialSpec,
    pub beta_prime: f64,
}

impl MarkovianRisb {
    pub fn new(ring: RingParams, grid: RingGrid, bath: BathSpec) -> Result<Self> {
        Self::with_potential(ring, grid, bath, PotentialSpec::default())
    }

    pub fn with_potential(
        ring: RingParams,
        grid: RingGrid,
        bath: BathSpec,
        pot: PotentialSpec,
    ) -> Result<Self> {
        ring.validate()?;
        bath.validate()?;
        pot.validate(&grid)?;
        let beta_prime = effective_beta(&ring, bath.beta)?;
        Ok(Self {
            ring,
            grid,
            bath,
            pot,
            beta_prime,
        })
    }

    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        let (rows, nt) = (self.grid.rows(), self.grid.n_theta);
        let w = ArrayView2::from_shape((rows, nt), input).unwrap();
        let mut o = ArrayViewMut2::from_shape((rows, nt), out).unwrap();
        o.fill(0.0);
        neg_liouvillian_into(
            w,
            o.view_mut(),
            &self.grid,
            &self.ring,
            &self.pot,
            &Trig::new(&self.grid),
        );
        let r0 = self.ring.radius;
        let diff = self.bath.eta * r0 * r0 / (self.beta_prime * HBAR * HBAR);
        let fric = self.bath.eta / (2.0 * self.ring.mass * HBAR);
        let g = self.ring.gauge_momentum();
        for r in 0..rows {
            let up = (r + 2 < rows).then(|| r + 2);
            let dn = r.checked_sub(2);
            let pu = self.grid.p(r) + 2.0 * self.grid.dp() - g;
            let pd = self.grid.p(r) - 2.0 * self.grid.dp() - g;
            for j in 0..nt {
                let a = up.map_or(0.0, |u| w[(u, j)]);
                let b = dn.map_or(0.0, |d| w[(d, j)]);
                o[(r, j)] += diff * (a - 2.0 * w[(r, j)] + b) + fric * (pu * a - pd * b);
            }
        }
    }
}

pub fn markovian_rhs(w: &WignerField, ring: &RingParams, bath: &BathSpec) -> Result<WignerField> {
    let m = MarkovianRisb::new(*ring, w.grid, *bath)?;
    let mut out = w.grid.zeros();
    m.apply(
        w.values.as_slice().unwrap(),
        out.values.as_slice_mut().unwrap(),
    );
    Ok(out)
}

/// `W(p_n) -> W(p_{n-2k})` on every field, zero-filled.
pub fn flux_shift(stack: &AdoStack, k: i64) -> AdoStack {
    let mut out = AdoStack::zeros(stack.grid, stack.len());
    let rows = stack.grid.rows() as i64;
    for i in 0..stack.len() {
        for r in 0..rows {
            let src = r - 2 * k;
            if (0..rows).contains(&src) {
                out.data
                    .index_axis_mut(Axis(0), i)
                    .row_mut(r as usize)
                    .assign(&stack.data.index_axis(Axis(0), i).row(src as usize));
            }
        }
    }
    out
}

/// `sin(theta) dW/dp_n`, the dipole kick that starts a linear-response run.
pub fn dipole_kick(w: &WignerField) -> WignerField {
    let mut d = grid::delta_p(w);
    for j in 0..w.grid.n_theta {
        let s = w.grid.theta(j).sin();
        d.values.column_mut(j).mapv_inplace(|v| v * s);
    }
    d
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub model: String,
    pub k_terms: usize,
    pub n_trunc: usize,
    pub n_ado: usize,
    pub bath: BathSpec,
    pub ring: RingParams,
    pub flux_bar: f64,
    pub indices: Vec<Vec<u8>>,
}

/// Directory with `grid.json`, `manifest.json` and one snapshot per index.
pub fn write_checkpoint(dir: &Path, stack: &AdoStack, manifest: &CheckpointManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    if manifest.n_ado != stack.len() {
        return Err(Error::Shape(
            "manifest and stack disagree on the number of fields".into(),
        ));
    }
    grid::write_grid_sidecar(&stack.grid, &dir.join("grid.json"))?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    for i in 0..stack.len() {
        let path = dir.join(format!("ado_{i:06}.csv"));
        grid::write_snapshot(&stack.field(i), &path)?;
        fs::remove_file(grid::sidecar_path(&path))?;
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<(AdoStack, CheckpointManifest)> {
    let grid = grid::read_grid_sidecar(&dir.join("grid.json"))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut stack = AdoStack::zeros(grid, manifest.n_ado);
    for i in 0..manifest.n_ado {
        let w = grid::read_snapshot_on(&dir.join(format!("ado_{i:06}.csv")), grid)?;
        stack.data.index_axis_mut(Axis(0), i).assign(&w.values);
    }
    Ok((stack, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::pade_decompose;
    use crate::grid::make_grid;
    use approx::assert_relative_eq;

    #[test]
    fn liouvillian_examples() {
        let g = make_grid(16, 4).unwrap();
        let ring = RingParams::default();
        let pot = PotentialSpec::default();
        let flat = WignerField::from_fn(g, |n, _| n as f64);
        assert!(liouvillian_apply(&flat, &ring, &pot)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 0.0));
        let w = WignerField::from_fn(g, |n, t| if n == 2 { t.sin() } else { 0.0 });
        let l = liouvillian_apply(&w, &ring, &pot).unwrap();
        let fac = g.dtheta().sin() / g.dtheta();
        for j in 0..16 {
            // p_2 = hbar, so -(p_2 / I_S) cos(theta), up to the stencil factor
            assert_relative_eq!(
                l.values[(g.row_of(2).unwrap(), j)],
                -2.0 * g.theta(j).cos() * fac,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn potential_range_is_checked() {
        let g = make_grid(8, 2).unwrap();
        let pot = PotentialSpec {
            cos_coeffs: vec![0.0, 0.0, 1.0],
            sin_coeffs: vec![],
        };
        assert!(liouvillian_apply(&g.zeros(), &RingParams::default(), &pot).is_err());
    }

    #[test]
    fn effective_temperature() {
        let ring = RingParams::default();
        assert_relative_eq!(
            effective_beta(&ring, 0.2).unwrap(),
            0.25,
            max_relative = 1e-15
        );
        assert!(matches!(
            effective_beta(&ring, 2.5),
            Err(Error::MarkovianInvalid { .. })
        ));
        let g = make_grid(8, 3).unwrap();
        assert!(MarkovianRisb::new(ring, g, BathSpec::new(0.01, 1.0, 2.5).unwrap()).is_err());
    }

    #[test]
    fn markovian_without_coupling_is_free() {
        let g = make_grid(8, 3).unwrap();
        let ring = RingParams::default().with_flux(0.2);
        let w = WignerField::from_fn(g, |n, t| (n as f64 + t).cos());
        let m = markovian_rhs(&w, &ring, &BathSpec::new(0.0, 1.0, 0.2).unwrap()).unwrap();
        let l = liouvillian_apply(&w, &ring, &PotentialSpec::default()).unwrap();
        assert_eq!(m, l);
    }

    #[test]
    fn zero_coupling_decouples_hierarchy() {
        let g = make_grid(8, 3).unwrap();
        let ring = RingParams::default();
        let bath = BathSpec::new(0.0, 1.0, 1.0).unwrap();
        let gen = RisbHeom::new(
            ring,
            g,
            bath,
            pade_decompose(1.0, 1).unwrap(),
            PotentialSpec::default(),
            2,
        )
        .unwrap();
        let mut s = AdoStack::zeros(g, gen.n_ado());
        s.as_slice_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = ((i * 7) % 13) as f64 * 0.1);
        let out = heom_rhs(&s, &gen).unwrap();
        // primary: free Liouvillian plus the raising coupling, which does not vanish at eta = 0
        for i in 1..gen.n_ado() {
            if gen.hier.level(i) == 2 {
                let decay = gen.hier.decay(i, &gen.rates);
                let free =
                    liouvillian_apply(&s.field(i), &ring, &PotentialSpec::default()).unwrap();
                let expect = &free.values - &(decay * &s.field(i).values);
                for (a, b) in out.field(i).values.iter().zip(expect.iter()) {
                    assert_relative_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn flux_shift_roundtrip() {
        let g = make_grid(4, 5).unwrap();
        let mut s = AdoStack::zeros(g, 2);
        s.as_slice_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 + 1.0);
        assert_eq!(flux_shift(&s, 0), s);
        let back = flux_shift(&flux_shift(&s, 1), -1);
        for i in 0..2 {
            for r in 2..g.rows() - 2 {
                assert_eq!(
                    back.data.index_axis(Axis(0), i).row(r),
                    s.data.index_axis(Axis(0), i).row(r)
                );
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(4, 2).unwrap();
        let bath = BathSpec::new(0.1, 1.0, 1.0).unwrap();
        let gen = RisbHeom::new(
            RingParams::default(),
            g,
            bath,
            pade_decompose(1.0, 0).unwrap(),
            PotentialSpec::default(),
            1,
        )
        .unwrap();
        let mut s = AdoStack::zeros(g, gen.n_ado());
        s.as_slice_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64).sqrt() / 7.0);
        let m = CheckpointManifest {
            model: "risb".into(),
            k_terms: 0,
            n_trunc: 1,
            n_ado: gen.n_ado(),
            bath,
            ring: RingParams::default(),
            flux_bar: 0.0,
            indices: (0..gen.n_ado())
                .map(|i| gen.hier.counts(i).to_vec())
                .collect(),
        };
        write_checkpoint(dir.path(), &s, &m).unwrap();
        let (back, m2) = read_checkpoint(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m2, m);
    }
}

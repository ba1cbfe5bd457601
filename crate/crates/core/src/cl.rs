//! Caldeira-Leggett reference model: continuous momentum, angle periodic by
//! fiat. Hierarchy generator with an adiabatic terminator, and the Markovian
//! Fokker-Planck limit.

use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathSpec, KernelTerms, PadeDecomposition};
use crate::grid::RingParams;
use crate::hierarchy::{HierarchySpace, DEFAULT_LIMIT};
use crate::{Error, Result};

/// Finite-difference order for momentum derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentumStencil {
    Second,
    #[default]
    Fourth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClGrid {
    pub n_p: usize,
    pub dp: f64,
    pub n_theta: usize,
    pub stencil: MomentumStencil,
}

impl Default for ClGrid {
    fn default() -> Self {
        Self {
            n_p: 128,
            dp: 0.25,
            n_theta: 64,
            stencil: MomentumStencil::Fourth,
        }
    }
}

impl ClGrid {
    pub fn new(n_p: usize, dp: f64, n_theta: usize) -> Result<Self> {
        let g = Self {
            n_p,
            dp,
            n_theta,
            stencil: MomentumStencil::default(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p < 8 || !(self.dp > 0.0) || self.n_theta < 4 {
            return Err(Error::InvalidArgument(format!(
                "CL grid needs n_p >= 8, dp > 0, n_theta >= 4; got {}, {}, {}",
                self.n_p, self.dp, self.n_theta
            )));
        }
        Ok(())
    }

    pub fn with_stencil(self, stencil: MomentumStencil) -> Self {
        Self { stencil, ..self }
    }

    pub fn len(&self) -> usize {
        self.n_p * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Symmetric about zero: `p_i = (i - (n_p - 1)/2) dp`.
    pub fn p(&self, i: usize) -> f64 {
        (i as f64 - (self.n_p as f64 - 1.0) / 2.0) * self.dp
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n_theta as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta()
    }

    pub fn zeros(&self) -> ClField {
        ClField {
            values: Array2::zeros((self.n_p, self.n_theta)),
            grid: *self,
        }
    }

    /// First-derivative stencil as (offset, weight) pairs, already divided by dp.
    fn d1(&self) -> &'static [(i64, f64)] {
        match self.stencil {
            MomentumStencil::Second => &[(-1, -0.5), (1, 0.5)],
            MomentumStencil::Fourth => &[
                (-2, 1.0 / 12.0),
                (-1, -8.0 / 12.0),
                (1, 8.0 / 12.0),
                (2, -1.0 / 12.0),
            ],
        }
    }

    fn d2(&self) -> &'static [(i64, f64)] {
        match self.stencil {
            MomentumStencil::Second => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
            MomentumStencil::Fourth => &[
                (-2, -1.0 / 12.0),
                (-1, 16.0 / 12.0),
                (0, -30.0 / 12.0),
                (1, 16.0 / 12.0),
                (2, -1.0 / 12.0),
            ],
        }
    }

    pub fn half_width(&self) -> usize {
        match self.stencil {
            MomentumStencil::Second => 1,
            MomentumStencil::Fourth => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClField {
    pub values: Array2<f64>,
    pub grid: ClGrid,
}

impl ClField {
    pub fn from_fn(grid: ClGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.n_p, grid.n_theta), |(i, j)| {
            f(grid.p(i), grid.theta(j))
        });
        Self { values, grid }
    }
}

/// `dp * sum_i integral dtheta W`.
pub fn cl_trace(w: &ClField) -> f64 {
    w.grid.dp * w.grid.dtheta() * w.values.sum()
}

/// `out[i] += scale * sum_s c_s w[i + s] / dp^order`, zero outside the grid.
fn stencil_into(
    w: ArrayView2<f64>,
    out: &mut ArrayViewMut2<f64>,
    st: &[(i64, f64)],
    scale: impl Fn(usize) -> f64,
    dp_pow: f64,
) {
    let n = w.nrows() as i64;
    for i in 0..n {
        let s = scale(i as usize) / dp_pow;
        if s == 0.0 {
            continue;
        }
        let mut o = out.row_mut(i as usize);
        for &(off, c) in st {
            let src = i + off;
            if (0..n).contains(&src) {
                o.scaled_add(s * c, &w.row(src as usize));
            }
        }
    }
}

fn drift_into(w: ArrayView2<f64>, out: &mut ArrayViewMut2<f64>, grid: &ClGrid, ring: &RingParams) {
    let nt = grid.n_theta;
    let inv = 1.0 / (2.0 * grid.dtheta());
    for i in 0..grid.n_p {
        let c = -ring.velocity(grid.p(i)) * inv;
        let row = w.row(i);
        let mut o = out.row_mut(i);
        for j in 0..nt {
            let jp = if j + 1 == nt { 0 } else { j + 1 };
            let jm = if j == 0 { nt - 1 } else { j - 1 };
            o[j] += c * (row[jp] - row[jm]);
        }
    }
}

/// `-(p - q r0 A)/I_S dW/dtheta + (eta/m_S) d/dp[(p - q r0 A) + (I_S/beta) d/dp] W`,
/// with the outer derivative expanded so that no product is differentiated
/// numerically.
#[derive(Debug, Clone)]
pub struct ClMarkovian {
    pub ring: RingParams,
    pub grid: ClGrid,
    pub bath: BathSpec,
}

impl ClMarkovian {
    pub fn new(ring: RingParams, grid: ClGrid, bath: BathSpec) -> Result<Self> {
        ring.validate()?;
        grid.validate()?;
        bath.validate()?;
        Ok(Self { ring, grid, bath })
    }

    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let w = ArrayView2::from_shape((g.n_p, g.n_theta), input).unwrap();
        let mut o = ArrayViewMut2::from_shape((g.n_p, g.n_theta), out).unwrap();
        o.fill(0.0);
        drift_into(w, &mut o, g, &self.ring);
        let k = self.bath.eta / self.ring.mass;
        let gauge = self.ring.gauge_momentum();
        o.scaled_add(k, &w);
        stencil_into(w, &mut o, g.d1(), |i| k * (g.p(i) - gauge), g.dp);
        let diff = k * self.ring.inertia() / self.bath.beta;
        stencil_into(w, &mut o, g.d2(), |_| diff, g.dp * g.dp);
    }
}

pub fn cl_markovian_rhs(w: &ClField, ring: &RingParams, bath: &BathSpec) -> Result<ClField> {
    let m = ClMarkovian::new(*ring, w.grid, *bath)?;
    let mut out = w.grid.zeros();
    m.apply(
        w.values.as_slice().unwrap(),
        out.values.as_slice_mut().unwrap(),
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClStack {
    pub grid: ClGrid,
    pub data: Array3<f64>,
}

impl ClStack {
    pub fn zeros(grid: ClGrid, n: usize) -> Self {
        Self {
            grid,
            data: Array3::zeros((n, grid.n_p, grid.n_theta)),
        }
    }

    pub fn from_primary(w: &ClField, n: usize) -> Self {
        let mut s = Self::zeros(w.grid, n);
        s.data.index_axis_mut(Axis(0), 0).assign(&w.values);
        s
    }

    pub fn len(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn field(&self, i: usize) -> ClField {
        ClField {
            values: self.data.index_axis(Axis(0), i).to_owned(),
            grid: self.grid,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().unwrap()
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closure {
    /// Indices beyond the truncation are zero.
    Zero,
    /// Indices beyond the truncation take their adiabatic value.
    Terminator,
}

/// Hierarchy for the single CL bath. Modes `k = 0..=K`, `nu_0 = gamma`.
///
/// `dW_n/dt = -[L + sum n_k nu_k] W_n + Phi sum_k W_{n+e_k}
///            + sum_k n_k nu_k Theta_k W_{n-e_k}`
/// with `Phi = r0 d/dp`,
/// `Theta_0 = (eta r0/I_S)[(p - q r0 A) + (I_S/beta)(1 + S) d/dp]` and
/// `Theta_k = -r0 (2 eta etabar_k gamma^2 / (beta (gamma^2 - nu_k^2))) d/dp`.
pub struct ClHeom {
    pub ring: RingParams,
    pub grid: ClGrid,
    pub bath: BathSpec,
    pub pade: PadeDecomposition,
    pub hier: HierarchySpace,
    pub closure: Closure,
    nu: Vec<f64>,
    /// Coefficient of d/dp in each Theta_k (for k = 0 the diffusion part).
    theta_d: Vec<f64>,
    /// Coefficient of (p - q r0 A) in Theta_0.
    theta_p: f64,
}

impl ClHeom {
    pub fn new(
        ring: RingParams,
        grid: ClGrid,
        bath: BathSpec,
        pade: PadeDecomposition,
        n_trunc: usize,
        closure: Closure,
    ) -> Result<Self> {
        ring.validate()?;
        grid.validate()?;
        bath.validate()?;
        let k = pade.k();
        let hier = HierarchySpace::new(k + 1, n_trunc, DEFAULT_LIMIT)?;
        let terms = KernelTerms::new(&bath, &pade);
        let (eta, g, beta, r0) = (bath.eta, bath.gamma, bath.beta, ring.radius);
        let g2 = g * g;
        let s: f64 = pade
            .nu
            .iter()
            .zip(&pade.etabar)
            .map(|(n, e)| 2.0 * e * g2 / (g2 - n * n))
            .sum();
        let mut theta_d = vec![eta * r0 / beta * (1.0 + s)];
        for (n, e) in pade.nu.iter().zip(&pade.etabar) {
            theta_d.push(-r0 * 2.0 * eta * e * g2 / (beta * (g2 - n * n)));
        }
        Ok(Self {
            ring,
            grid,
            bath,
            pade,
            hier,
            closure,
            nu: terms.nu,
            theta_d,
            theta_p: eta * r0 / ring.inertia(),
        })
    }

    pub fn n_ado(&self) -> usize {
        self.hier.len()
    }

    pub fn state_len(&self) -> usize {
        self.n_ado() * self.grid.len()
    }

    /// `out += scale * Theta_k w`.
    fn theta_into(&self, k: usize, w: ArrayView2<f64>, out: &mut ArrayViewMut2<f64>, scale: f64) {
        let g = &self.grid;
        if k == 0 {
            let gauge = self.ring.gauge_momentum();
            for i in 0..g.n_p {
                out.row_mut(i)
                    .scaled_add(scale * self.theta_p * (g.p(i) - gauge), &w.row(i));
            }
        }
        stencil_into(w, out, g.d1(), |_| scale * self.theta_d[k], g.dp);
    }

    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let block = g.len();
        let shape = (g.n_p, g.n_theta);
        let nmodes = self.hier.n_modes;
        let r0 = self.ring.radius;
        let view =
            |j: usize| ArrayView2::from_shape(shape, &input[j * block..(j + 1) * block]).unwrap();
        out.par_chunks_mut(block).enumerate().for_each(|(i, o)| {
            let mut o = ArrayViewMut2::from_shape(shape, o).unwrap();
            o.fill(0.0);
            let wi = view(i);
            drift_into(wi, &mut o, &g, &self.ring);
            let decay = self.hier.decay(i, &self.nu);
            o.scaled_add(-decay, &wi);
            let counts = self.hier.counts(i);
            // everything Phi acts on is gathered first, then differentiated once
            let mut raised = Array2::<f64>::zeros(shape);
            let mut any = false;
            for k in 0..nmodes {
                if let Some(j) = self.hier.raise(i, k) {
                    raised += &view(j);
                    any = true;
                }
                if let Some(j) = self.hier.lower(i, k) {
                    self.theta_into(k, view(j), &mut o, counts[k] as f64 * self.nu[k]);
                }
            }
            if self.closure == Closure::Terminator
                && self.hier.level(i) == self.hier.n_trunc
                && self.bath.eta != 0.0
            {
                // W_{n+e_k} ~ [(n_k+1) nu_k Theta_k W_n + sum_{j!=k} n_j nu_j Theta_j W_{n+e_k-e_j}]
                //             / (sum n.nu + nu_k)
                let mut tv = raised.view_mut();
                let mut key = counts.to_vec();
                for k in 0..nmodes {
                    let den = decay + self.nu[k];
                    self.theta_into(k, wi, &mut tv, (counts[k] as f64 + 1.0) * self.nu[k] / den);
                    for jm in 0..nmodes {
                        if jm == k || counts[jm] == 0 {
                            continue;
                        }
                        key[k] += 1;
                        key[jm] -= 1;
                        let pos = self.hier.position(&key).expect("same level");
                        key[k] -= 1;
                        key[jm] += 1;
                        self.theta_into(
                            jm,
                            view(pos),
                            &mut tv,
                            counts[jm] as f64 * self.nu[jm] / den,
                        );
                    }
                }
                any = true;
            }
            if any {
                stencil_into(raised.view(), &mut o, g.d1(), |_| r0, g.dp);
            }
        });
    }
}

pub fn cl_heom_rhs(stack: &ClStack, gen: &ClHeom) -> Result<ClStack> {
    if stack.grid != gen.grid || stack.len() != gen.n_ado() {
        return Err(Error::Shape(format!(
            "stack of {} fields does not match the generator ({})",
            stack.len(),
            gen.n_ado()
        )));
    }
    let mut out = ClStack::zeros(stack.grid, stack.len());
    gen.apply(stack.as_slice(), out.as_slice_mut());
    Ok(out)
}

/// `sin(theta) dW/dp`.
pub fn cl_dipole_kick(w: &ClField) -> ClField {
    let g = w.grid;
    let mut out = g.zeros();
    {
        let mut o = out.values.view_mut();
        stencil_into(w.values.view(), &mut o, g.d1(), |_| 1.0, g.dp);
    }
    for j in 0..g.n_theta {
        let s = g.theta(j).sin();
        out.values.column_mut(j).mapv_inplace(|v| v * s);
    }
    out
}

//! Equilibrium of the ring hierarchy in its rotationally invariant sector.
//!
//! Without a potential the generator commutes with rotations. Rotating each
//! pair of bath modes `(x_k, y_k)` into circular modes `(u_k, v_k)` turns
//! `f_x, f_y, g_x, g_y` into single Fourier harmonics, so in the sector
//! reached from a rotation-invariant primary field every auxiliary field is a
//! single harmonic `c(n) e^{i l theta}` with `l = sum_k (n_uk - n_vk)`. The
//! unknowns shrink from `rows x n_theta` to about `rows / 2` complex numbers
//! per index. The steady state is found by eliminating the auxiliary fields
//! (one GMRES solve per primary row) and solving the small primary system.
//!
//! The basis change acts on the generating function `G(z) = sum rho_n z^n/n!`
//! through `z_x = -i z_u + i z_v`, `z_y = z_u + z_v`.

use log::info;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bath::{BathSpec, KernelTerms, PadeDecomposition};
use crate::grid::{RingGrid, RingParams, WignerField};
use crate::hierarchy::{HierarchySpace, ModeLayout, DEFAULT_LIMIT};
use crate::linalg::{gmres, GmresOptions};
use crate::risb::AdoStack;
use crate::{Error, Result, HBAR};

type C = Complex64;

const I: C = C::new(0.0, 1.0);

#[derive(Debug, Clone, Copy)]
struct Link {
    j: u32,
    up: C,
    dn: C,
}

/// Rows of one parity class: `n = lo + 2 s`.
#[derive(Debug, Clone, Copy)]
struct Class {
    lo: i64,
    count: usize,
}

pub struct SectorSolver {
    pub grid: RingGrid,
    pub ring: RingParams,
    pub bath: BathSpec,
    pub pade: PadeDecomposition,
    pub hier: HierarchySpace,
    pub layout: ModeLayout,
    pub gmres: GmresOptions,
    classes: [Class; 2],
    offsets: Vec<usize>,
    harmonic_factor: Vec<f64>,
    harmonic: Vec<i64>,
    decay: Vec<f64>,
    links: Vec<Vec<Link>>,
}

#[derive(Debug, Clone)]
pub struct SectorEquilibrium {
    pub flux_bar: f64,
    /// Normalized physical distribution (uniform in theta).
    pub primary: WignerField,
    /// Solution in the circular-mode basis, concatenated per index.
    pub coeffs: Vec<C>,
    /// `|A x| / |x|` of the assembled sector solution.
    pub residual: f64,
    /// `sup |dW_0/dt|` of the physical field under the full generator.
    pub primary_rate: f64,
    pub max_gmres_iterations: usize,
    /// Largest imaginary part of the primary before it was discarded.
    pub max_imag: f64,
}

impl SectorSolver {
    pub fn new(
        grid: RingGrid,
        ring: RingParams,
        bath: BathSpec,
        pade: PadeDecomposition,
        n_trunc: usize,
    ) -> Result<Self> {
        ring.validate()?;
        bath.validate()?;
        let layout = ModeLayout {
            k_terms: pade.k(),
            axes: 2,
        };
        let hier = HierarchySpace::new(layout.n_modes(), n_trunc, DEFAULT_LIMIT)?;
        let terms = KernelTerms::new(&bath, &pade);
        let nmax = grid.n_max as i64;
        let class = |par: i64| {
            let lo = if (-nmax - par).rem_euclid(2) == 0 {
                -nmax
            } else {
                -nmax + 1
            };
            Class {
                lo,
                count: ((nmax - lo) / 2 + 1) as usize,
            }
        };
        let classes = [class(0), class(1)];
        let mut offsets = Vec::with_capacity(hier.len() + 1);
        let mut off = 0;
        for i in 0..hier.len() {
            offsets.push(off);
            off += classes[hier.level(i) % 2].count;
        }
        offsets.push(off);

        let kp1 = layout.k_terms + 1;
        let r0 = ring.radius;
        let s0 = bath.eta * bath.gamma.powi(2) * r0 / 2.0;
        let mut harmonic = Vec::with_capacity(hier.len());
        let mut harmonic_factor = Vec::with_capacity(hier.len());
        let mut decay = Vec::with_capacity(hier.len());
        let mut links = Vec::with_capacity(hier.len());
        let dth = grid.dtheta();
        for i in 0..hier.len() {
            let c = hier.counts(i);
            let l: i64 = (0..kp1).map(|k| c[k] as i64 - c[kp1 + k] as i64).sum();
            harmonic.push(l);
            harmonic_factor.push((l as f64 * dth).sin() / dth);
            decay.push(
                (0..layout.n_modes())
                    .map(|m| c[m] as f64 * terms.nu[m % kp1])
                    .sum(),
            );
            let mut li = Vec::new();
            for m in 0..layout.n_modes() {
                let (axis, k) = layout.split(m);
                if let Some(j) = hier.raise(i, m) {
                    let a = C::from(r0 / (2.0 * HBAR));
                    li.push(Link {
                        j: j as u32,
                        up: a,
                        dn: -a,
                    });
                }
                if let Some(j) = hier.lower(i, m) {
                    let cnt = c[m] as f64;
                    let d = C::from(terms.coef[k] * r0 / HBAR);
                    let s = if k == 0 {
                        if axis == 0 {
                            I * s0
                        } else {
                            -I * s0
                        }
                    } else {
                        C::from(0.0)
                    };
                    li.push(Link {
                        j: j as u32,
                        up: cnt * (d + s),
                        dn: cnt * (-d + s),
                    });
                }
            }
            links.push(li);
        }
        Ok(Self {
            grid,
            ring,
            bath,
            pade,
            hier,
            layout,
            gmres: GmresOptions {
                restart: 50,
                max_iter: 5000,
                rtol: 1e-12,
            },
            classes,
            offsets,
            harmonic_factor,
            harmonic,
            decay,
            links,
        })
    }

    pub fn n_unknowns(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn n_primary(&self) -> usize {
        self.offsets[1]
    }

    fn class_of(&self, i: usize) -> Class {
        self.classes[self.hier.level(i) % 2]
    }

    /// `y = A x` for the sector generator at flux `flux_bar`.
    fn apply(&self, vel: &[Vec<f64>; 2], x: &[C], y: &mut [C]) {
        let mut chunks: Vec<(usize, &mut [C])> = Vec::with_capacity(self.hier.len());
        let mut rest = y;
        for i in 0..self.hier.len() {
            let len = self.offsets[i + 1] - self.offsets[i];
            let (a, b) = rest.split_at_mut(len);
            chunks.push((i, a));
            rest = b;
        }
        chunks
            .into_par_iter()
            .for_each(|(i, out)| self.apply_row(vel, i, x, out));
    }

    fn apply_row(&self, vel: &[Vec<f64>; 2], i: usize, x: &[C], out: &mut [C]) {
        let par = self.hier.level(i) % 2;
        let cls = self.classes[par];
        let other = self.classes[1 - par];
        let xi = &x[self.offsets[i]..self.offsets[i + 1]];
        let hf = self.harmonic_factor[i];
        let dec = self.decay[i];
        let v = &vel[par];
        for s in 0..cls.count {
            out[s] = C::new(-dec, -v[s] * hf) * xi[s];
        }
        // row n = lo + 2s couples to rows n +- 1 of the other class
        let shift = ((cls.lo + 1) - other.lo) / 2;
        for link in &self.links[i] {
            let j = link.j as usize;
            let xj = &x[self.offsets[j]..self.offsets[j + 1]];
            for (s, o) in out.iter_mut().enumerate() {
                let su = s as i64 + shift;
                let sd = su - 1;
                let mut acc = C::new(0.0, 0.0);
                if (0..other.count as i64).contains(&su) {
                    acc += link.up * xj[su as usize];
                }
                if (0..other.count as i64).contains(&sd) {
                    acc += link.dn * xj[sd as usize];
                }
                *o += acc;
            }
        }
    }

    fn velocities(&self, flux_bar: f64) -> [Vec<f64>; 2] {
        let ring = self.ring.with_flux(flux_bar);
        let dp = self.grid.dp();
        let v = |c: Class| {
            (0..c.count)
                .map(|s| ring.velocity((c.lo + 2 * s as i64) as f64 * dp))
                .collect::<Vec<_>>()
        };
        [v(self.classes[0]), v(self.classes[1])]
    }

    /// Sector residual `|A x| / |x|` at the given flux.
    pub fn residual(&self, flux_bar: f64, x: &[C]) -> f64 {
        self.residuals(flux_bar, x).0
    }

    /// Relative residual and the largest rate of change among the primary
    /// unknowns.
    fn residuals(&self, flux_bar: f64, x: &[C]) -> (f64, f64) {
        let vel = self.velocities(flux_bar);
        let mut y = vec![C::new(0.0, 0.0); x.len()];
        self.apply(&vel, x, &mut y);
        let rate = y[..self.n_primary()]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.norm()));
        (crate::linalg::norm2(&y) / crate::linalg::norm2(x), rate)
    }

    pub fn solve(&self, flux_bar: f64) -> Result<SectorEquilibrium> {
        let vel = self.velocities(flux_bar);
        let n = self.n_unknowns();
        let np = self.n_primary();
        let ny = n - np;
        let zero = C::new(0.0, 0.0);
        let mut full = vec![zero; n];
        let mut out = vec![zero; n];
        let mut s_mat = DMatrix::<C>::zeros(np, np);
        let mut ys: Vec<Vec<C>> = Vec::with_capacity(np);
        let mut max_its = 0;
        let mut diag = vec![zero; ny];
        for i in 1..self.hier.len() {
            let par = self.hier.level(i) % 2;
            for s in 0..self.class_of(i).count {
                diag[self.offsets[i] - np + s] =
                    C::new(-self.decay[i], -vel[par][s] * self.harmonic_factor[i]);
            }
        }
        for c in 0..np {
            full.fill(zero);
            full[c] = C::new(1.0, 0.0);
            self.apply(&vel, &full, &mut out);
            let b: Vec<C> = out[np..].iter().map(|v| -v).collect();
            let mut y = vec![zero; ny];
            if ny > 0 {
                let info = gmres(
                    |u: &[C], w: &mut [C]| {
                        let mut xf = vec![zero; n];
                        xf[np..].copy_from_slice(u);
                        let mut yf = vec![zero; n];
                        self.apply(&vel, &xf, &mut yf);
                        w.copy_from_slice(&yf[np..]);
                    },
                    &b,
                    &mut y,
                    Some(&diag),
                    self.gmres,
                )?;
                max_its = max_its.max(info.iterations);
            }
            full.fill(zero);
            full[c] = C::new(1.0, 0.0);
            full[np..].copy_from_slice(&y);
            self.apply(&vel, &full, &mut out);
            for r in 0..np {
                s_mat[(r, c)] = out[r];
            }
            ys.push(y);
        }
        // S w = 0 together with sum w = 1, in the least-squares sense: the
        // hard momentum wall makes S only approximately singular
        let mut aug = DMatrix::<C>::zeros(np + 1, np);
        aug.view_mut((0, 0), (np, np)).copy_from(&s_mat);
        for c in 0..np {
            aug[(np, c)] = C::new(1.0, 0.0);
        }
        let mut rhs = DVector::<C>::zeros(np + 1);
        rhs[np] = C::new(1.0, 0.0);
        let svd = aug.svd(true, true);
        let w = svd.solve(&rhs, 1e-14).map_err(|e| Error::Solver {
            reason: format!("primary system: {e}"),
            residual: f64::NAN,
        })?;

        let mut coeffs = vec![zero; n];
        for c in 0..np {
            coeffs[c] = w[c];
            for (k, yk) in ys[c].iter().enumerate() {
                coeffs[np + k] += w[c] * yk;
            }
        }
        let mut primary = self.grid.zeros();
        let cls = self.classes[0];
        let mut max_imag = 0.0f64;
        for s in 0..cls.count {
            let r = self.grid.row_of(cls.lo + 2 * s as i64).unwrap();
            primary.values.row_mut(r).fill(coeffs[s].re);
            max_imag = max_imag.max(coeffs[s].im.abs());
        }
        let tr = crate::grid::trace(&primary);
        primary.values.mapv_inplace(|v| v / tr);
        coeffs.iter_mut().for_each(|v| *v /= tr);
        let (residual, primary_rate) = self.residuals(flux_bar, &coeffs);
        info!(
            "sector flux={flux_bar} n_ado={} unknowns={n} gmres_max={max_its} residual={residual:.3e} rate={primary_rate:.3e} imag={:.1e}",
            self.hier.len(),
            max_imag / tr
        );
        Ok(SectorEquilibrium {
            flux_bar,
            primary,
            coeffs,
            residual,
            primary_rate,
            max_gmres_iterations: max_its,
            max_imag: max_imag / tr.abs(),
        })
    }

    /// Expands a sector solution back into Cartesian-mode fields on the full
    /// grid, ordered like the hierarchy of [`crate::risb::RisbHeom`].
    pub fn reconstruct(&self, eq: &SectorEquilibrium) -> AdoStack {
        let kp1 = self.layout.k_terms + 1;
        let mut stack = AdoStack::zeros(self.grid, self.hier.len());
        let nt = self.grid.n_theta;
        let phase: Vec<Vec<C>> = (0..nt)
            .map(|j| {
                let th = self.grid.theta(j);
                (0..=2 * self.hier.n_trunc)
                    .map(|l| C::from_polar(1.0, (l as f64 - self.hier.n_trunc as f64) * th))
                    .collect()
            })
            .collect();
        let mut uv = vec![0u8; self.layout.n_modes()];
        for i in 0..self.hier.len() {
            let c = self.hier.counts(i).to_vec();
            let tot: Vec<usize> = (0..kp1)
                .map(|k| c[k] as usize + c[kp1 + k] as usize)
                .collect();
            let mut a = vec![0usize; kp1];
            loop {
                let mut coef = C::new(1.0, 0.0);
                for k in 0..kp1 {
                    coef *= transform_coef(c[k] as usize, c[kp1 + k] as usize, a[k]);
                }
                if coef.norm() > 0.0 {
                    for k in 0..kp1 {
                        uv[k] = a[k] as u8;
                        uv[kp1 + k] = (tot[k] - a[k]) as u8;
                    }
                    let j = self.hier.position(&uv).expect("same level, same space");
                    let l = self.harmonic[j];
                    let cls = self.class_of(j);
                    let xj = &eq.coeffs[self.offsets[j]..self.offsets[j + 1]];
                    let mut f = stack.data.index_axis_mut(ndarray::Axis(0), i);
                    for s in 0..cls.count {
                        let r = self.grid.row_of(cls.lo + 2 * s as i64).unwrap();
                        let amp = coef * xj[s];
                        for jt in 0..nt {
                            f[(r, jt)] +=
                                (amp * phase[jt][(l + self.hier.n_trunc as i64) as usize]).re;
                        }
                    }
                }
                // odometer over a_k in 0..=tot_k
                let mut k = 0;
                while k < kp1 {
                    if a[k] < tot[k] {
                        a[k] += 1;
                        break;
                    }
                    a[k] = 0;
                    k += 1;
                }
                if k == kp1 {
                    break;
                }
            }
        }
        stack
    }
}

fn binom(n: usize, k: usize) -> f64 {
    crate::hierarchy::binomial(n as u64, k as u64) as f64
}

/// Weight of the circular-mode element `(a, c + d - a)` in the Cartesian
/// element `(c, d)`: `d_x = (i/2)(d_u - d_v)`, `d_y = (1/2)(d_u + d_v)`.
fn transform_coef(c: usize, d: usize, a: usize) -> C {
    let mut sum = 0.0;
    for i1 in a.saturating_sub(d)..=c.min(a) {
        let sign = if (c - i1).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        sum += binom(c, i1) * binom(d, a - i1) * sign;
    }
    I.powu(c as u32) * (sum / 2f64.powi((c + d) as i32))
}

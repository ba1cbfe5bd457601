//! Momentum distributions, linear response and spectra, persistent current,
//! and the free-rotor reference formulas.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cl::{ClField, ClGrid, ClHeom, ClMarkovian};
use crate::grid::{self, RingParams, WignerField};
use crate::integrate::{rkf45_propagate, RkfOptions};
use crate::risb::{MarkovianRisb, RisbHeom};
use crate::{Error, Result, HBAR};

/// Trace tolerance accepted by [`momentum_distribution`].
pub const TRACE_TOL: f64 = 1e-4;
/// Largest generator residual for a field to count as stationary.
pub const STATIONARY_TOL: f64 = 1e-6;
/// Equilibration threshold required before evaluating the current.
pub const CURRENT_EQ_TOL: f64 = 1e-9;

/// A linear generator `dW/dt = L W` acting on a flat state made of
/// equal-sized blocks (the primary field first).
pub trait Generator: Sync {
    fn state_len(&self) -> usize;
    fn block_len(&self) -> usize;
    fn apply(&self, input: &[f64], out: &mut [f64]);
}

impl Generator for RisbHeom {
    fn state_len(&self) -> usize {
        RisbHeom::state_len(self)
    }
    fn block_len(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        RisbHeom::apply(self, input, out)
    }
}

impl Generator for MarkovianRisb {
    fn state_len(&self) -> usize {
        self.grid.len()
    }
    fn block_len(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        MarkovianRisb::apply(self, input, out)
    }
}

impl Generator for ClMarkovian {
    fn state_len(&self) -> usize {
        self.grid.len()
    }
    fn block_len(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        ClMarkovian::apply(self, input, out)
    }
}

impl Generator for ClHeom {
    fn state_len(&self) -> usize {
        ClHeom::state_len(self)
    }
    fn block_len(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        ClHeom::apply(self, input, out)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `|L x|_inf / |x|_inf`.
pub fn generator_residual(gen: &impl Generator, x: &[f64]) -> f64 {
    let mut f = vec![0.0; x.len()];
    gen.apply(x, &mut f);
    sup(&f) / sup(x).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistEntry {
    /// Momentum index for the ring grid, absent for CL.
    pub n: Option<i64>,
    pub p: f64,
    pub value: f64,
}

/// `P(p_n)` on the ring grid (probabilities) or `P(p)` on the CL grid
/// (densities, `weight = dp`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumDistribution {
    pub entries: Vec<DistEntry>,
    pub weight: f64,
    /// Most negative entry, zero if none.
    pub min_value: f64,
}

impl MomentumDistribution {
    fn build(entries: Vec<DistEntry>, weight: f64) -> Self {
        let min_value = entries.iter().map(|e| e.value).fold(0.0, f64::min);
        Self {
            entries,
            weight,
            min_value,
        }
    }

    pub fn total(&self) -> f64 {
        self.weight * self.entries.iter().map(|e| e.value).sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.weight * self.entries.iter().map(|e| e.p * e.value).sum::<f64>() / self.total()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.weight
            * self
                .entries
                .iter()
                .map(|e| (e.p - m).powi(2) * e.value)
                .sum::<f64>()
            / self.total()
    }
}

/// Either kind of phase-space field.
pub enum AnyField<'a> {
    Ring(&'a WignerField),
    Cl(&'a ClField),
}

impl<'a> From<&'a WignerField> for AnyField<'a> {
    fn from(w: &'a WignerField) -> Self {
        AnyField::Ring(w)
    }
}

impl<'a> From<&'a ClField> for AnyField<'a> {
    fn from(w: &'a ClField) -> Self {
        AnyField::Cl(w)
    }
}

pub fn momentum_distribution<'a>(w: impl Into<AnyField<'a>>) -> Result<MomentumDistribution> {
    match w.into() {
        AnyField::Ring(w) => {
            let tr = grid::trace(w);
            if (tr - 1.0).abs() > TRACE_TOL {
                return Err(Error::NotNormalized { trace: tr });
            }
            let g = w.grid;
            let scale = g.dp() * g.dtheta();
            let entries = (0..g.rows())
                .map(|r| DistEntry {
                    n: Some(g.n_of(r)),
                    p: g.p(r),
                    value: scale * w.values.row(r).sum(),
                })
                .collect();
            Ok(MomentumDistribution::build(entries, 1.0))
        }
        AnyField::Cl(w) => {
            let tr = crate::cl::cl_trace(w);
            if (tr - 1.0).abs() > TRACE_TOL {
                return Err(Error::NotNormalized { trace: tr });
            }
            let g = w.grid;
            let entries = (0..g.n_p)
                .map(|i| DistEntry {
                    n: None,
                    p: g.p(i),
                    value: g.dtheta() * w.values.row(i).sum(),
                })
                .collect();
            Ok(MomentumDistribution::build(entries, g.dp))
        }
    }
}

/// `exp[-beta (p - q r0 A)^2 / 2 I_S]` on the CL momentum grid, normalized so
/// that `dp * sum = 1`.
pub fn gaussian_reference(grid: &ClGrid, ring: &RingParams, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let c = ring.gauge_momentum();
    let i_s = ring.inertia();
    let raw: Vec<f64> = (0..grid.n_p)
        .map(|i| (-beta * (grid.p(i) - c).powi(2) / (2.0 * i_s)).exp())
        .collect();
    let norm = grid.dp * raw.iter().sum::<f64>();
    Ok(raw.into_iter().map(|v| v / norm).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSeries {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
}

/// Kicks every block of the stationary state `eq`, propagates under `gen` and
/// records `moment` of the primary block at `t = 0, dt, ..., t_max`.
pub fn linear_response(
    eq: &[f64],
    gen: &impl Generator,
    kick: impl Fn(&[f64], &mut [f64]),
    moment: impl Fn(&[f64]) -> f64,
    t_max: f64,
    dt: f64,
    tol: f64,
) -> Result<ResponseSeries> {
    if eq.len() != gen.state_len() {
        return Err(Error::Shape(format!(
            "state of length {} for a generator of {}",
            eq.len(),
            gen.state_len()
        )));
    }
    if !(dt > 0.0) || !(t_max > 0.0) {
        return Err(Error::InvalidArgument(
            "t_max and dt must be positive".into(),
        ));
    }
    let res = generator_residual(gen, eq);
    if res > STATIONARY_TOL {
        return Err(Error::NotEquilibrated {
            delta: res,
            threshold: STATIONARY_TOL,
        });
    }
    let b = gen.block_len();
    let mut y = vec![0.0; eq.len()];
    for (src, dst) in eq.chunks(b).zip(y.chunks_mut(b)) {
        kick(src, dst);
    }
    let steps = (t_max / dt).round() as usize;
    let samples: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut value = Vec::with_capacity(samples.len());
    let stats = rkf45_propagate(
        &mut y,
        |_, x, f| gen.apply(x, f),
        0.0,
        samples[steps],
        RkfOptions::new(tol, b),
        &samples,
        |_, x| value.push(moment(&x[..b])),
    )?;
    log::info!(
        "response steps={} rejected={} rhs_evals={}",
        stats.accepted,
        stats.rejected,
        stats.rhs_evals
    );
    Ok(ResponseSeries { t: samples, value })
}

/// `sin(theta) delta_p W` on one ring block.
pub fn ring_kick(grid: &crate::grid::RingGrid) -> impl Fn(&[f64], &mut [f64]) + '_ {
    move |src, dst| {
        let w = WignerField::from_values(
            *grid,
            ndarray::Array2::from_shape_vec((grid.rows(), grid.n_theta), src.to_vec()).unwrap(),
        )
        .unwrap();
        let k = crate::risb::dipole_kick(&w);
        dst.copy_from_slice(k.values.as_slice().unwrap());
    }
}

/// `(1/2) sum_n integral dtheta cos(theta) W` on one ring block.
pub fn ring_moment(grid: &crate::grid::RingGrid) -> impl Fn(&[f64]) -> f64 + '_ {
    let cos: Vec<f64> = (0..grid.n_theta).map(|j| grid.theta(j).cos()).collect();
    move |x| {
        let s: f64 = x
            .chunks(grid.n_theta)
            .map(|row| row.iter().zip(&cos).map(|(a, c)| a * c).sum::<f64>())
            .sum();
        grid.dp() * grid.dtheta() * s
    }
}

/// `sin(theta) dW/dp` on one CL block.
pub fn cl_kick(grid: &ClGrid) -> impl Fn(&[f64], &mut [f64]) + '_ {
    move |src, dst| {
        let w = ClField {
            values: ndarray::Array2::from_shape_vec((grid.n_p, grid.n_theta), src.to_vec())
                .unwrap(),
            grid: *grid,
        };
        let k = crate::cl::cl_dipole_kick(&w);
        dst.copy_from_slice(k.values.as_slice().unwrap());
    }
}

pub fn cl_moment(grid: &ClGrid) -> impl Fn(&[f64]) -> f64 + '_ {
    let cos: Vec<f64> = (0..grid.n_theta).map(|j| grid.theta(j).cos()).collect();
    move |x| {
        let s: f64 = x
            .chunks(grid.n_theta)
            .map(|row| row.iter().zip(&cos).map(|(a, c)| a * c).sum::<f64>())
            .sum();
        grid.dp * grid.dtheta() * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub omega: Vec<f64>,
    pub sigma: Vec<f64>,
    pub damping: f64,
    pub t_max: f64,
    pub dt: f64,
    pub r1: ResponseSeries,
}

impl SpectrumResult {
    pub fn d_omega(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }
}

/// Zero-padding factor applied before the transform.
const PAD: usize = 8;

/// `sigma(omega) = Im integral dt e^{i omega t} R(t) e^{-damping t}` on
/// `omega in [0, pi/dt)`. `damping = None` picks `2 pi / t_max`.
pub fn spectrum(r1: &ResponseSeries, damping: Option<f64>) -> Result<SpectrumResult> {
    let n = r1.value.len();
    if n < 2 || r1.t.len() != n {
        return Err(Error::Shape(
            "response series needs at least two matching samples".into(),
        ));
    }
    let dt = r1.t[1] - r1.t[0];
    let t_max = r1.t[n - 1] - r1.t[0];
    if r1
        .t
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt)
    {
        return Err(Error::InvalidArgument(
            "response samples are not uniform".into(),
        ));
    }
    let damping = damping.unwrap_or(2.0 * std::f64::consts::PI / t_max);
    if !(damping >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must be non-negative, got {damping}"
        )));
    }
    let len = (PAD * n).next_power_of_two();
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); len];
    for (k, (t, v)) in r1.t.iter().zip(&r1.value).enumerate() {
        // trapezoid end weight at t = 0
        let w = if k == 0 { 0.5 } else { 1.0 };
        buf[k] = Complex64::new(w * v * (-damping * (t - r1.t[0])).exp(), 0.0);
    }
    // the unnormalized inverse transform carries e^{+i omega t}
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    let dw = 2.0 * std::f64::consts::PI / (len as f64 * dt);
    let half = len / 2;
    Ok(SpectrumResult {
        omega: (0..half).map(|j| j as f64 * dw).collect(),
        sigma: buf[..half].iter().map(|c| dt * c.im).collect(),
        damping,
        t_max,
        dt,
        r1: r1.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub height: f64,
}

/// Interior local maxima of `sigma` above `rel` times its global maximum,
/// positions refined by a parabola through the three top samples.
pub fn find_peaks(s: &SpectrumResult, rel: f64) -> Vec<Peak> {
    let y = &s.sigma;
    let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) {
        return Vec::new();
    }
    let dw = s.d_omega();
    (1..y.len().saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] > rel * top)
        .map(|i| {
            let den = y[i - 1] - 2.0 * y[i] + y[i + 1];
            let shift = if den != 0.0 {
                0.5 * (y[i - 1] - y[i + 1]) / den
            } else {
                0.0
            };
            Peak {
                omega: s.omega[i] + shift * dw,
                height: y[i],
            }
        })
        .collect()
}

/// `J = (hbar/2) sum_n integral dtheta (2 omega0 / Phi0)(p_n - hbar Phibar) W`,
/// refused unless `delta` (the equilibration residual) is below
/// [`CURRENT_EQ_TOL`].
pub fn persistent_current(w: &WignerField, ring: &RingParams, delta: f64) -> Result<f64> {
    if !(delta < CURRENT_EQ_TOL) {
        return Err(Error::NotEquilibrated {
            delta,
            threshold: CURRENT_EQ_TOL,
        });
    }
    let g = w.grid;
    let k = 2.0 * ring.omega0() / ring.flux_quantum();
    let s: f64 = (0..g.rows())
        .map(|r| (g.p(r) - HBAR * ring.flux_bar) * w.values.row(r).sum())
        .sum();
    Ok(g.dp() * g.dtheta() * k * s)
}

/// `E_n = hbar omega0 (n - Phibar)^2`.
pub fn eigenenergy(n: i64, ring: &RingParams) -> f64 {
    HBAR * ring.omega0() * (n as f64 - ring.flux_bar).powi(2)
}

/// `I_n = (2 hbar omega0 / Phi0)(n - Phibar)`.
pub fn byers_yang_current(n: i64, ring: &RingParams) -> f64 {
    2.0 * HBAR * ring.omega0() / ring.flux_quantum() * (n as f64 - ring.flux_bar)
}

/// Thermal average of `I_n` over `|n| <= n_max`.
pub fn thermal_current(ring: &RingParams, beta: f64, n_max: i64) -> f64 {
    let e0 = (-n_max..=n_max)
        .map(|n| eigenenergy(n, ring))
        .fold(f64::INFINITY, f64::min);
    let (mut z, mut j) = (0.0, 0.0);
    for n in -n_max..=n_max {
        let w = (-beta * (eigenenergy(n, ring) - e0)).exp();
        z += w;
        j += w * byers_yang_current(n, ring);
    }
    j / z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `|n| -> |n| + 1`
    Up,
    /// `-|n| -> -(|n| + 1)`
    Down,
}

/// `hbar omega0 (2|n| + 1 -+ 2 Phibar)`, minus for [`Branch::Up`].
pub fn transition_energy(n: i64, branch: Branch, ring: &RingParams) -> f64 {
    let s = match branch {
        Branch::Up => -1.0,
        Branch::Down => 1.0,
    };
    HBAR * ring.omega0() * (2.0 * n.unsigned_abs() as f64 + 1.0 + s * 2.0 * ring.flux_bar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentSweep {
    pub points: Vec<(f64, f64)>,
    pub eta: f64,
    pub beta: f64,
    pub k: usize,
    pub n_trunc: usize,
}

impl CurrentSweep {
    pub fn validate(&self) -> Result<()> {
        if self
            .points
            .iter()
            .any(|(f, j)| !f.is_finite() || !j.is_finite())
        {
            return Err(Error::InvalidArgument(
                "non-finite current sweep entry".into(),
            ));
        }
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument(
                "flux values must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.points.iter().fold(0.0f64, |m, (_, j)| m.max(j.abs()))
    }

    pub fn at(&self, flux: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|(f, _)| (f - flux).abs() < 1e-12)
            .map(|(_, j)| *j)
    }
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_spectrum_csv(s: &SpectrumResult, path: &Path) -> Result<()> {
    write_csv(
        path,
        "omega,sigma",
        s.omega
            .iter()
            .zip(&s.sigma)
            .map(|(w, v)| format!("{w},{v}")),
    )
}

pub fn write_r1_csv(r: &ResponseSeries, path: &Path) -> Result<()> {
    write_csv(
        path,
        "t,value",
        r.t.iter().zip(&r.value).map(|(t, v)| format!("{t},{v}")),
    )
}

pub fn write_pdist_csv(d: &MomentumDistribution, path: &Path) -> Result<()> {
    write_csv(
        path,
        "n_or_p,value",
        d.entries.iter().map(|e| match e.n {
            Some(n) => format!("{n},{}", e.value),
            None => format!("{},{}", e.p, e.value),
        }),
    )
}

/// CL distribution with the analytic Gaussian as a third column.
pub fn write_pdist_with_reference_csv(
    d: &MomentumDistribution,
    reference: &[f64],
    path: &Path,
) -> Result<()> {
    write_csv(
        path,
        "n_or_p,value,gaussian",
        d.entries
            .iter()
            .zip(reference)
            .map(|(e, g)| format!("{},{},{g}", e.p, e.value)),
    )
}

pub fn write_current_csv(c: &CurrentSweep, path: &Path) -> Result<()> {
    let mut s = String::from("phi_bar,current,eta,beta,K,N_trunc\n");
    for (f, j) in &c.points {
        writeln!(s, "{f},{j},{},{},{},{}", c.eta, c.beta, c.k, c.n_trunc).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_field_distribution_is_row_mass() {
        let g = make_grid(8, 3).unwrap();
        let mut w = WignerField::from_fn(g, |n, _| {
            if n % 2 == 0 {
                (4 - n.abs()) as f64
            } else {
                0.0
            }
        });
        let tr = grid::trace(&w);
        w.values.mapv_inplace(|v| v / tr);
        let d = momentum_distribution(&w).unwrap();
        for (r, e) in d.entries.iter().enumerate() {
            assert_relative_eq!(
                e.value,
                g.dp() * 2.0 * std::f64::consts::PI * w.values[(r, 0)],
                epsilon = 1e-14
            );
        }
        assert_relative_eq!(d.total(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.mean(), 0.0, epsilon = 1e-12);
        w.values *= 2.0;
        assert!(matches!(
            momentum_distribution(&w),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn gaussian_moments() {
        let g = ClGrid::default();
        let ring = RingParams::default().with_flux(1.0);
        let v = gaussian_reference(&g, &ring, 0.2).unwrap();
        let mean: f64 = g.dp * (0..g.n_p).map(|i| g.p(i) * v[i]).sum::<f64>();
        let var: f64 = g.dp
            * (0..g.n_p)
                .map(|i| (g.p(i) - mean).powi(2) * v[i])
                .sum::<f64>();
        assert_relative_eq!(mean, ring.gauge_momentum(), epsilon = 1e-9);
        assert_relative_eq!(var, 0.5 / 0.2, max_relative = 1e-6);
        assert!(gaussian_reference(&g, &ring, 0.0).is_err());
    }

    #[test]
    fn ring_formulas() {
        let r0 = RingParams::default();
        let rh = r0.with_flux(0.5);
        assert_eq!(eigenenergy(0, &r0), 0.0);
        assert_relative_eq!(eigenenergy(1, &r0), 1.0);
        assert_relative_eq!(eigenenergy(0, &rh), 0.25);
        assert_relative_eq!(eigenenergy(1, &rh), 0.25);
        assert_eq!(byers_yang_current(0, &r0), 0.0);
        let r = r0.with_flux(0.25);
        assert_relative_eq!(byers_yang_current(0, &r), -2.0 * 0.25 / r.flux_quantum());
        assert_relative_eq!(transition_energy(0, Branch::Up, &r), 0.5);
        assert_relative_eq!(transition_energy(0, Branch::Down, &r), 1.5);
        for n in 0..4 {
            for b in [Branch::Up, Branch::Down] {
                let e = transition_energy(n, b, &rh);
                assert_relative_eq!(e / 2.0, (e / 2.0).round());
            }
        }
        assert!(thermal_current(&r0, 2.5, 20).abs() < 1e-15);
    }

    #[test]
    fn spectrum_of_damped_sine() {
        let (w1, g, dt) = (1.3, 0.05, 0.05);
        let t: Vec<f64> = (0..=4000).map(|k| k as f64 * dt).collect();
        let value = t.iter().map(|t| (w1 * t).sin() * (-g * t).exp()).collect();
        let s = spectrum(&ResponseSeries { t, value }, Some(0.0)).unwrap();
        let peaks = find_peaks(&s, 0.5);
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].omega - w1).abs() < 2.0 * std::f64::consts::PI / 200.0);
        // Lorentzian height 1/(2g) for g << w1
        assert_relative_eq!(peaks[0].height, 1.0 / (2.0 * g), max_relative = 0.02);
        let zero = ResponseSeries {
            t: vec![0.0, 0.1, 0.2],
            value: vec![0.0; 3],
        };
        assert!(spectrum(&zero, None)
            .unwrap()
            .sigma
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn sweep_validation() {
        let mut c = CurrentSweep {
            points: vec![(0.0, 0.0), (0.1, -0.02)],
            eta: 1e-3,
            beta: 2.5,
            k: 4,
            n_trunc: 2,
        };
        assert!(c.validate().is_ok());
        c.points.push((0.1, 0.0));
        assert!(c.validate().is_err());
    }
}

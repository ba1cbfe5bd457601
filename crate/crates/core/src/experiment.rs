//! End-to-end pipelines shared by the command-line tool and the tests:
//! equilibrium states, kicked-response spectra and current sweeps.

use log::info;
use rayon::prelude::*;

use crate::bath::{pade_decompose, BathSpec};
use crate::cl::{ClField, ClGrid, ClHeom, ClMarkovian, ClStack, Closure};
use crate::grid::{RingGrid, RingParams, WignerField};
use crate::integrate::{
    implicit_steady_state, relax_to_steady_state, Constraint, RkfOptions, SteadyMethod,
    SteadyProblem,
};
use crate::observables::{
    self, cl_kick, cl_moment, linear_response, persistent_current, ring_kick, ring_moment,
    CurrentSweep, Generator, SpectrumResult,
};
use crate::risb::{AdoStack, MarkovianRisb, RisbHeom};
use crate::sector::SectorSolver;
use crate::{Error, Result};

/// Constraints for a field stored row by row with `nt` angles: unit mass on
/// row `r`, and no alternating-sign component on that row. The centred angle
/// difference cannot see that component, so without the second condition the
/// steady state is not unique.
fn row_constraints(r: usize, nt: usize) -> Vec<Constraint> {
    let mut c = vec![Constraint {
        row: r * nt,
        coeffs: (0..nt).map(|j| (r * nt + j, 1.0)).collect(),
        value: 1.0,
    }];
    if nt.is_multiple_of(2) {
        let coeffs = (0..nt)
            .map(|j| (r * nt + j, if j % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        c.push(Constraint {
            row: r * nt + 1,
            coeffs,
            value: 0.0,
        });
    }
    c
}

#[derive(Debug, Clone)]
pub struct Equilibrium<F> {
    pub field: F,
    /// `|L W| / |W|` of the returned state.
    pub residual: f64,
}

/// Markovian ring steady state. Only even rows are reachable from a physical
/// state, the odd sector is held at zero.
pub fn risb_markovian_equilibrium(
    ring: &RingParams,
    grid: &RingGrid,
    bath: &BathSpec,
    method: SteadyMethod,
) -> Result<Equilibrium<WignerField>> {
    let gen = MarkovianRisb::new(*ring, *grid, *bath)?;
    let nt = grid.n_theta;
    let n = grid.len();
    let weights = vec![grid.dp() * grid.dtheta(); n];
    let inactive: Vec<bool> = (0..n).map(|i| grid.n_of(i / nt) % 2 != 0).collect();
    // the steady state peaks near the gauge-shifted momentum
    let centre = (2.0 * (ring.gauge_momentum() / 2.0).round()) as i64;
    let centre = centre.clamp(-(grid.n_max as i64) + 1, grid.n_max as i64 - 1);
    let centre = if centre % 2 != 0 {
        centre - centre.signum()
    } else {
        centre
    };
    let cons = row_constraints(grid.row_of(centre).unwrap(), nt);
    let prob = SteadyProblem {
        n,
        half_bandwidth: 3 * nt,
        trace_weights: &weights,
        inactive: Some(&inactive),
        constraints: &cons,
        block: nt,
    };
    let s = implicit_steady_state(|x, y| gen.apply(x, y), &prob, method)?;
    let field = WignerField::from_values(
        *grid,
        ndarray::Array2::from_shape_vec((grid.rows(), nt), s.x).unwrap(),
    )?;
    Ok(Equilibrium {
        field,
        residual: s.residual,
    })
}

pub fn cl_markovian_equilibrium(
    ring: &RingParams,
    grid: &ClGrid,
    bath: &BathSpec,
    method: SteadyMethod,
) -> Result<Equilibrium<ClField>> {
    let gen = ClMarkovian::new(*ring, *grid, *bath)?;
    let nt = grid.n_theta;
    let n = grid.len();
    let weights = vec![grid.dp * grid.dtheta(); n];
    let c = ring.gauge_momentum();
    let row = (0..grid.n_p)
        .min_by(|&a, &b| (grid.p(a) - c).abs().total_cmp(&(grid.p(b) - c).abs()))
        .unwrap();
    let cons = row_constraints(row, nt);
    let prob = SteadyProblem {
        n,
        half_bandwidth: (grid.half_width() + 1) * nt,
        trace_weights: &weights,
        inactive: None,
        constraints: &cons,
        block: nt,
    };
    let s = implicit_steady_state(|x, y| gen.apply(x, y), &prob, method)?;
    let mut field = grid.zeros();
    field.values.as_slice_mut().unwrap().copy_from_slice(&s.x);
    Ok(Equilibrium {
        field,
        residual: s.residual,
    })
}

/// Ring hierarchy equilibrium through the rotational-sector solver, expanded
/// to the full grid. The residual is the sector residual.
pub fn risb_heom_equilibrium(
    solver: &SectorSolver,
    flux_bar: f64,
) -> Result<Equilibrium<AdoStack>> {
    let eq = solver.solve(flux_bar)?;
    Ok(Equilibrium {
        residual: eq.residual,
        field: solver.reconstruct(&eq),
    })
}

/// Relaxes a hierarchy state by direct propagation until the primary block
/// stops changing.
pub fn relax_equilibrium(
    y: &mut [f64],
    gen: &impl Generator,
    horizon: f64,
    check_interval: f64,
    eps: f64,
    tol: f64,
) -> Result<f64> {
    let b = gen.block_len();
    let r = relax_to_steady_state(
        y,
        |_, x, f| gen.apply(x, f),
        b,
        horizon,
        check_interval,
        eps,
        RkfOptions::new(tol, b),
    )?;
    info!("relaxed t={} delta={:.3e}", r.t, r.last_delta());
    Ok(r.last_delta())
}

/// CL hierarchy equilibrium, relaxed from the Markovian steady state.
#[allow(clippy::too_many_arguments)]
pub fn cl_heom_equilibrium(
    ring: &RingParams,
    grid: &ClGrid,
    bath: &BathSpec,
    k: usize,
    n_trunc: usize,
    closure: Closure,
    horizon: f64,
    check_interval: f64,
    eps: f64,
    tol: f64,
) -> Result<(ClHeom, Equilibrium<ClStack>)> {
    let gen = ClHeom::new(
        *ring,
        *grid,
        *bath,
        pade_decompose(bath.beta, k)?,
        n_trunc,
        closure,
    )?;
    let start = cl_markovian_equilibrium(ring, grid, bath, SteadyMethod::Auto)?;
    let mut stack = ClStack::from_primary(&start.field, gen.n_ado());
    let delta = relax_equilibrium(
        stack.as_slice_mut(),
        &gen,
        horizon,
        check_interval,
        eps,
        tol,
    )?;
    if !(delta < eps) {
        return Err(Error::NotEquilibrated {
            delta,
            threshold: eps,
        });
    }
    let residual = observables::generator_residual(&gen, stack.as_slice());
    Ok((
        gen,
        Equilibrium {
            field: stack,
            residual,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct ResponseSettings {
    pub t_max: f64,
    pub dt: f64,
    pub damping: Option<f64>,
    pub tol: f64,
}

impl Default for ResponseSettings {
    fn default() -> Self {
        Self {
            t_max: 200.0,
            dt: 0.05,
            damping: None,
            tol: 1e-8,
        }
    }
}

pub fn ring_spectrum(
    eq: &[f64],
    gen: &impl Generator,
    grid: &RingGrid,
    s: ResponseSettings,
) -> Result<SpectrumResult> {
    let r1 = linear_response(
        eq,
        gen,
        ring_kick(grid),
        ring_moment(grid),
        s.t_max,
        s.dt,
        s.tol,
    )?;
    observables::spectrum(&r1, s.damping)
}

pub fn cl_spectrum(
    eq: &[f64],
    gen: &impl Generator,
    grid: &ClGrid,
    s: ResponseSettings,
) -> Result<SpectrumResult> {
    let r1 = linear_response(
        eq,
        gen,
        cl_kick(grid),
        cl_moment(grid),
        s.t_max,
        s.dt,
        s.tol,
    )?;
    observables::spectrum(&r1, s.damping)
}

/// Markovian ring spectrum: steady state, kick, propagation and transform.
pub fn risb_markovian_spectrum(
    ring: &RingParams,
    grid: &RingGrid,
    bath: &BathSpec,
    s: ResponseSettings,
) -> Result<SpectrumResult> {
    let eq = risb_markovian_equilibrium(ring, grid, bath, SteadyMethod::Auto)?;
    let gen = MarkovianRisb::new(*ring, *grid, *bath)?;
    ring_spectrum(eq.field.values.as_slice().unwrap(), &gen, grid, s)
}

pub fn cl_markovian_spectrum(
    ring: &RingParams,
    grid: &ClGrid,
    bath: &BathSpec,
    s: ResponseSettings,
) -> Result<SpectrumResult> {
    let eq = cl_markovian_equilibrium(ring, grid, bath, SteadyMethod::Auto)?;
    let gen = ClMarkovian::new(*ring, *grid, *bath)?;
    cl_spectrum(eq.field.values.as_slice().unwrap(), &gen, grid, s)
}

/// Ring hierarchy spectrum from the sector equilibrium.
pub fn risb_heom_spectrum(
    ring: &RingParams,
    grid: &RingGrid,
    bath: &BathSpec,
    k: usize,
    n_trunc: usize,
    s: ResponseSettings,
) -> Result<SpectrumResult> {
    let pade = pade_decompose(bath.beta, k)?;
    let solver = SectorSolver::new(*grid, *ring, *bath, pade.clone(), n_trunc)?;
    let eq = risb_heom_equilibrium(&solver, ring.flux_bar)?;
    let gen = RisbHeom::new(*ring, *grid, *bath, pade, Default::default(), n_trunc)?;
    ring_spectrum(eq.field.as_slice(), &gen, grid, s)
}

/// Persistent current of the ring hierarchy at each flux, in parallel,
/// returned in ascending flux order.
pub fn current_sweep(
    ring: &RingParams,
    grid: &RingGrid,
    bath: &BathSpec,
    k: usize,
    n_trunc: usize,
    flux: &[f64],
) -> Result<CurrentSweep> {
    let solver = SectorSolver::new(*grid, *ring, *bath, pade_decompose(bath.beta, k)?, n_trunc)?;
    let mut sorted = flux.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let points = sorted
        .par_iter()
        .map(|&f| {
            let eq = solver.solve(f)?;
            let j = persistent_current(&eq.primary, &ring.with_flux(f), eq.primary_rate)?;
            info!("current flux={f} J={j:.6e}");
            Ok((f, j))
        })
        .collect::<Result<Vec<_>>>()?;
    let sweep = CurrentSweep {
        points,
        eta: bath.eta,
        beta: bath.beta,
        k,
        n_trunc,
    };
    sweep.validate()?;
    Ok(sweep)
}

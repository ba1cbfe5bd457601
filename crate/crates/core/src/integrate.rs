//! Time propagation and steady-state solvers over flat `f64` states.

use log::{debug, info};

use nalgebra::{DMatrix, DVector};

use crate::linalg::{gmres_with, BandMatrix, GmresOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RkfOptions {
    /// Used as both absolute and relative tolerance.
    pub tol: f64,
    /// Length of one field inside the state; the error norm is the max over
    /// blocks of the per-block RMS.
    pub block_len: usize,
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl RkfOptions {
    pub fn new(tol: f64, block_len: usize) -> Self {
        Self {
            tol,
            block_len,
            h_init: None,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RkfStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub last_h: f64,
}

// Fehlberg 4(5) tableau; the fifth-order solution is propagated
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A: [[f64; 5]; 6] = [
    [0.0; 5],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [
        -8.0 / 27.0,
        2.0,
        -3544.0 / 2565.0,
        1859.0 / 4104.0,
        -11.0 / 40.0,
    ],
];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -0.2,
    0.0,
];

fn scaled_norm(e: &[f64], y0: &[f64], y1: &[f64], tol: f64, block: usize) -> f64 {
    let block = block.max(1).min(e.len().max(1));
    let mut worst = 0.0f64;
    for ((eb, ab), bb) in e.chunks(block).zip(y0.chunks(block)).zip(y1.chunks(block)) {
        let s: f64 = eb
            .iter()
            .zip(ab)
            .zip(bb)
            .map(|((ei, a), b)| {
                let sc = tol + tol * a.abs().max(b.abs());
                (ei / sc).powi(2)
            })
            .sum();
        // f64::max would swallow a NaN
        if !s.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max((s / eb.len() as f64).sqrt());
    }
    worst
}

/// Adaptive Runge-Kutta-Fehlberg 4(5) from `t0` to `t1`. `on_sample` is
/// called with cubic Hermite interpolants at every requested time in
/// `[t0, t1]` (sorted ascending).
pub fn rkf45_propagate(
    y: &mut [f64],
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    t0: f64,
    t1: f64,
    opts: RkfOptions,
    samples: &[f64],
    mut on_sample: impl FnMut(f64, &[f64]),
) -> Result<RkfStats> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let n = y.len();
    let span = t1 - t0;
    let mut stats = RkfStats::default();
    let mut next_sample = samples.partition_point(|&s| s < t0);
    while next_sample < samples.len() && samples[next_sample] <= t0 {
        on_sample(samples[next_sample], y);
        next_sample += 1;
    }
    if span <= 0.0 {
        return Ok(stats);
    }
    let h_min = 1e-12 * span;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 6];
    let mut f1 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut t = t0;
    rhs(t, y, &mut k[0]);
    stats.rhs_evals += 1;

    let mut h = match opts.h_init {
        Some(h) => h.min(span),
        None => {
            let zeros = vec![0.0; n];
            let d0 = scaled_norm(y, y, &zeros, opts.tol, opts.block_len);
            let d1 = scaled_norm(&k[0], y, &zeros, opts.tol, opts.block_len);
            if d1 < 1e-15 {
                span
            } else {
                let h0 = if d0 < 1e-5 {
                    1e-6 * span.min(1.0)
                } else {
                    0.01 * d0 / d1
                };
                for i in 0..n {
                    tmp[i] = y[i] + h0 * k[0][i];
                }
                rhs(t + h0, &tmp, &mut f1);
                stats.rhs_evals += 1;
                for i in 0..n {
                    err[i] = f1[i] - k[0][i];
                }
                let d2 = scaled_norm(&err, y, &zeros, opts.tol, opts.block_len) / h0;
                let h1 = if d1.max(d2) <= 1e-15 {
                    (h0 * 1e-3).max(1e-6)
                } else {
                    (0.01 / d1.max(d2)).powf(0.2)
                };
                (100.0 * h0).min(h1).min(span)
            }
        }
    };

    while t < t1 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::TooManySteps {
                t,
                max_steps: opts.max_steps,
            });
        }
        let last = t + h >= t1 - 1e-14 * span;
        if last {
            h = t1 - t;
        }
        for s in 1..6 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        acc += h * a * kj[i];
                    }
                }
                tmp[i] = acc;
            }
            rhs(t + C[s] * h, &tmp, &mut k[s]);
        }
        stats.rhs_evals += 5;
        for i in 0..n {
            let mut y5 = y[i];
            let mut e = 0.0;
            for s in 0..6 {
                y5 += h * B5[s] * k[s][i];
                e += h * (B5[s] - B4[s]) * k[s][i];
            }
            ynew[i] = y5;
            err[i] = e;
        }
        let en = scaled_norm(&err, y, &ynew, opts.tol, opts.block_len);
        if en <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            rhs(t_new, &ynew, &mut f1);
            stats.rhs_evals += 1;
            while next_sample < samples.len() && samples[next_sample] <= t_new {
                let ts = samples[next_sample];
                let s = ((ts - t) / h).clamp(0.0, 1.0);
                let (h00, h10, h01, h11) = (
                    2.0 * s.powi(3) - 3.0 * s * s + 1.0,
                    s.powi(3) - 2.0 * s * s + s,
                    -2.0 * s.powi(3) + 3.0 * s * s,
                    s.powi(3) - s * s,
                );
                for i in 0..n {
                    tmp[i] = h00 * y[i] + h10 * h * k[0][i] + h01 * ynew[i] + h11 * h * f1[i];
                }
                on_sample(ts, &tmp);
                next_sample += 1;
            }
            debug!(
                "rkf45 t={t_new:.6e} h={h:.3e} err={en:.3e} accepted={}",
                stats.accepted + 1
            );
            y.copy_from_slice(&ynew);
            std::mem::swap(&mut k[0], &mut f1);
            t = t_new;
            stats.accepted += 1;
            stats.last_h = h;
            let fac = if en == 0.0 {
                5.0
            } else {
                (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            stats.rejected += 1;
            let fac = if en.is_finite() {
                (0.9 * en.powf(-0.25)).clamp(0.1, 0.5)
            } else {
                0.1
            };
            h *= fac;
            debug!("rkf45 reject t={t:.6e} h={h:.3e} err={en:.3e}");
            if h < h_min {
                return Err(Error::StepUnderflow {
                    t,
                    h,
                    h_min,
                    err: en,
                });
            }
        }
    }
    Ok(stats)
}

/// Largest accepted `|L x| / |x|` of an implicit steady state. A truncated
/// momentum grid leaks a little probability through its edges, so the
/// generator has no exact null vector; for the Markovian ring generator at
/// fractional flux this floor sits near 1e-9.
pub const STEADY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyMethod {
    /// Banded LU when the band fits comfortably in memory, GMRES otherwise.
    Auto,
    Direct,
    Krylov,
}

/// A linear, time-independent generator `L` with a known half bandwidth in
/// the flat ordering, and the weights defining its trace.
pub struct SteadyProblem<'a> {
    pub n: usize,
    pub half_bandwidth: usize,
    pub trace_weights: &'a [f64],
    /// Entries held at zero (e.g. a decoupled sector with its own null space).
    pub inactive: Option<&'a [bool]>,
    /// Equations replacing rows of `L x = 0`. One of them must fix the scale
    /// on the physical steady state; further ones remove spurious null
    /// vectors.
    pub constraints: &'a [Constraint],
    /// Block size of the block-Jacobi preconditioner used by the Krylov path
    /// (one angle row for phase-space fields).
    pub block: usize,
}

/// `sum_k c_k x_{i_k} = value`, written into equation `row`. All indices must
/// lie within the band of `row`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub row: usize,
    pub coeffs: Vec<(usize, f64)>,
    pub value: f64,
}

impl Constraint {
    pub fn pin(i: usize) -> Self {
        Self {
            row: i,
            coeffs: vec![(i, 1.0)],
            value: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub x: Vec<f64>,
    /// `|L x| / |x|` in the 2-norm.
    pub residual: f64,
}

/// Assembles a banded operator by probing with interleaved unit vectors.
pub fn assemble_banded(op: &impl Fn(&[f64], &mut [f64]), n: usize, hb: usize) -> BandMatrix {
    let mut a = BandMatrix::zeros(n, hb, hb);
    let stride = 2 * hb + 1;
    let mut e = vec![0.0; n];
    let mut y = vec![0.0; n];
    for c in 0..stride.min(n) {
        e.fill(0.0);
        for j in (c..n).step_by(stride) {
            e[j] = 1.0;
        }
        op(&e, &mut y);
        for j in (c..n).step_by(stride) {
            for i in j.saturating_sub(hb)..(j + hb + 1).min(n) {
                if y[i] != 0.0 {
                    a.set(i, j, y[i]);
                }
            }
        }
    }
    a
}

/// Solves `L x = 0` subject to the problem's constraints, each of which
/// replaces one equation so that the band stays intact; the result is
/// rescaled to unit trace afterwards.
pub fn implicit_steady_state(
    op: impl Fn(&[f64], &mut [f64]),
    prob: &SteadyProblem<'_>,
    method: SteadyMethod,
) -> Result<SteadyState> {
    let n = prob.n;
    let hb = prob.half_bandwidth;
    if prob.trace_weights.len() != n || prob.inactive.is_some_and(|m| m.len() != n) {
        return Err(Error::Shape("steady-state problem sizes disagree".into()));
    }
    if prob.constraints.is_empty() || prob.constraints.iter().all(|c| c.value == 0.0) {
        return Err(Error::InvalidArgument(
            "no constraint fixes the scale of the steady state".into(),
        ));
    }
    let inactive = |i: usize| prob.inactive.is_some_and(|m| m[i]);
    let mut replaced = vec![None; n];
    for (k, c) in prob.constraints.iter().enumerate() {
        if c.row >= n || inactive(c.row) || replaced[c.row].is_some() {
            return Err(Error::InvalidArgument(format!(
                "constraint row {} is out of range, inactive or reused",
                c.row
            )));
        }
        if c.coeffs
            .iter()
            .any(|&(i, _)| i >= n || i.abs_diff(c.row) > hb)
        {
            return Err(Error::InvalidArgument(format!(
                "constraint on row {} leaves the band",
                c.row
            )));
        }
        replaced[c.row] = Some(k);
    }
    let direct = match method {
        SteadyMethod::Direct => true,
        SteadyMethod::Krylov => false,
        SteadyMethod::Auto => (n as f64) * (3 * hb + 1) as f64 <= 5e7,
    };
    let mut rhs = vec![0.0; n];
    for c in prob.constraints {
        rhs[c.row] = c.value;
    }
    // the operator with identity rows for inactive entries and constraint rows
    let modified = |u: &[f64], v: &mut [f64]| {
        op(u, v);
        for i in 0..n {
            if inactive(i) {
                v[i] = u[i];
            } else if let Some(k) = replaced[i] {
                v[i] = prob.constraints[k]
                    .coeffs
                    .iter()
                    .map(|&(j, c)| c * u[j])
                    .sum();
            }
        }
    };
    let a = assemble_banded(&modified, n, hb);
    let mut x;
    if direct {
        let lu = a.factor()?;
        x = rhs.clone();
        lu.solve(&mut x);
    } else {
        let bs = prob.block.clamp(1, hb + 1);
        let blocks: Vec<_> = (0..n)
            .step_by(bs)
            .map(|s0| {
                let m = bs.min(n - s0);
                DMatrix::from_fn(m, m, |i, j| a.get(s0 + i, s0 + j)).lu()
            })
            .collect();
        if blocks.iter().any(|b| !b.is_invertible()) {
            return Err(Error::Solver {
                reason: "singular preconditioner block".into(),
                residual: f64::NAN,
            });
        }
        let precond = |v: &[f64], out: &mut [f64]| {
            for (k, lu) in blocks.iter().enumerate() {
                let s0 = k * bs;
                let m = lu.l().nrows();
                let sol = lu
                    .solve(&DVector::from_column_slice(&v[s0..s0 + m]))
                    .unwrap();
                out[s0..s0 + m].copy_from_slice(sol.as_slice());
            }
        };
        x = vec![0.0; n];
        let opts = GmresOptions {
            restart: 200,
            max_iter: 20_000,
            rtol: 1e-13,
        };
        let info = gmres_with(modified, &rhs, &mut x, precond, opts)?;
        info!(
            "steady_state method=krylov iterations={} residual={:.3e}",
            info.iterations, info.residual
        );
    }
    let tr: f64 = x.iter().zip(prob.trace_weights).map(|(a, b)| a * b).sum();
    if !(tr.abs() > 0.0) || !tr.is_finite() {
        return Err(Error::Solver {
            reason: "steady state has zero trace".into(),
            residual: f64::NAN,
        });
    }
    x.iter_mut().for_each(|v| *v /= tr);
    let mut r = vec![0.0; n];
    op(&x, &mut r);
    let residual = crate::linalg::norm2(&r) / crate::linalg::norm2(&x);
    info!("steady_state n={n} direct={direct} residual={residual:.3e}");
    if !(residual < STEADY_TOL) {
        return Err(Error::Solver {
            reason: format!("steady-state residual above {STEADY_TOL:e}"),
            residual,
        });
    }
    Ok(SteadyState { x, residual })
}

#[derive(Debug, Clone)]
pub struct Relaxed {
    pub t: f64,
    /// Sup-norm change of the monitored block over each check interval.
    pub deltas: Vec<f64>,
}

impl Relaxed {
    pub fn last_delta(&self) -> f64 {
        self.deltas.last().copied().unwrap_or(0.0)
    }
}

/// Propagates until the sup-norm change of `y[..monitored]` over one
/// `check_interval` drops below `eps`.
pub fn relax_to_steady_state(
    y: &mut [f64],
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    monitored: usize,
    horizon: f64,
    check_interval: f64,
    eps: f64,
    opts: RkfOptions,
) -> Result<Relaxed> {
    if !(eps > 0.0) || !(check_interval > 0.0) {
        return Err(Error::InvalidArgument(
            "eps and check_interval must be positive".into(),
        ));
    }
    let mut f = vec![0.0; y.len()];
    rhs(0.0, y, &mut f);
    let speed = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if speed * check_interval < eps {
        return Ok(Relaxed {
            t: 0.0,
            deltas: vec![speed * check_interval],
        });
    }
    let mut t = 0.0;
    let mut deltas = Vec::new();
    let mut o = opts;
    let mut prev = y[..monitored].to_vec();
    while t < horizon {
        let t_next = (t + check_interval).min(horizon);
        let stats = rkf45_propagate(y, &mut rhs, t, t_next, o, &[], |_, _| {})?;
        o.h_init = Some(stats.last_h.max(1e-12));
        let delta = y[..monitored]
            .iter()
            .zip(&prev)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prev.copy_from_slice(&y[..monitored]);
        deltas.push(delta);
        t = t_next;
        info!("relax t={t:.4} delta={delta:.3e} steps={}", stats.accepted);
        if delta < eps {
            return Ok(Relaxed { t, deltas });
        }
    }
    Err(Error::NotEquilibrated {
        delta: deltas.last().copied().unwrap_or(f64::INFINITY),
        threshold: eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rhs_takes_one_step() {
        let mut y = vec![1.0, 2.0];
        let s = rkf45_propagate(
            &mut y,
            |_, _, f| f.fill(0.0),
            0.0,
            5.0,
            RkfOptions::new(1e-8, 2),
            &[],
            |_, _| {},
        )
        .unwrap();
        assert_eq!(s.accepted, 1);
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn linear_decay() {
        for tol in [1e-6, 1e-9] {
            let mut y = vec![1.0];
            rkf45_propagate(
                &mut y,
                |_, y, f| f[0] = -y[0],
                0.0,
                1.0,
                RkfOptions::new(tol, 1),
                &[],
                |_, _| {},
            )
            .unwrap();
            assert!(
                (y[0] - (-1f64).exp()).abs() < 10.0 * tol,
                "tol {tol}: {}",
                y[0]
            );
        }
    }

    #[test]
    fn dense_output_hits_samples() {
        let mut y = vec![1.0, 0.0];
        let ts: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let mut got = Vec::new();
        rkf45_propagate(
            &mut y,
            |_, y, f| {
                f[0] = -y[1];
                f[1] = y[0];
            },
            0.0,
            10.0,
            RkfOptions::new(1e-10, 2),
            &ts,
            |t, y| got.push((t, y[0])),
        )
        .unwrap();
        assert_eq!(got.len(), ts.len());
        for (t, v) in got {
            assert!((v - t.cos()).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn underflow_is_reported() {
        let mut y = vec![1.0];
        let r = rkf45_propagate(
            &mut y,
            |_, y, f| f[0] = y[0] * y[0],
            0.0,
            2.0,
            RkfOptions::new(1e-8, 1),
            &[],
            |_, _| {},
        );
        assert!(
            matches!(
                r,
                Err(Error::StepUnderflow { .. }) | Err(Error::TooManySteps { .. })
            ),
            "{r:?}"
        );
    }

    #[test]
    fn steady_state_of_birth_death_chain() {
        // 0 <-> 1 <-> 2 <-> 3 with rates up 1, down 2: stationary weights 8:4:2:1
        let n = 4;
        let op = |x: &[f64], y: &mut [f64]| {
            y.fill(0.0);
            for i in 0..n {
                if i + 1 < n {
                    y[i] -= x[i];
                    y[i + 1] += x[i];
                }
                if i > 0 {
                    y[i] -= 2.0 * x[i];
                    y[i - 1] += 2.0 * x[i];
                }
            }
        };
        let w = vec![1.0; n];
        for method in [SteadyMethod::Direct, SteadyMethod::Krylov] {
            let c = [Constraint::pin(0)];
            let p = SteadyProblem {
                n,
                half_bandwidth: 1,
                trace_weights: &w,
                inactive: None,
                constraints: &c,
                block: 1,
            };
            let s = implicit_steady_state(op, &p, method).unwrap();
            let expect = [8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0];
            for (a, b) in s.x.iter().zip(expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relax_returns_immediately_when_stationary() {
        let mut y = vec![0.0; 3];
        let r = relax_to_steady_state(
            &mut y,
            |_, _, f| f.fill(0.0),
            3,
            10.0,
            1.0,
            1e-9,
            RkfOptions::new(1e-8, 3),
        )
        .unwrap();
        assert_eq!(r.t, 0.0);
    }
}

//! Banded LU with partial pivoting and restarted GMRES.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;
use num_traits::Zero;

use crate::{Error, Result};

/// Scalars GMRES can run over.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + std::fmt::Debug
{
    fn conj(self) -> Self;
    fn modulus(self) -> f64;
    fn from_real(x: f64) -> Self;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn from_real(x: f64) -> Self {
        x
    }
}

impl Scalar for Complex64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
}

pub fn norm2<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.modulus().powi(2)).sum::<f64>().sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += x.conj() * *y;
    }
    s
}

/// Real band matrix with `kl` sub- and `ku` super-diagonals, stored by rows
/// with room for the fill-in partial pivoting produces.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.offset(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            self.in_band(i, j),
            "({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    pub fn clear_row(&mut self, i: usize) {
        let s = i * self.width;
        self.data[s..s + self.width].fill(0.0);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.data[self.offset(i, j)] * x[j]).sum();
        }
    }

    /// In-place LU with row pivoting. Fails on an exactly zero pivot.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for i in 0..n {
            let last_row = (i + kl).min(n - 1);
            let last_col = (i + kl + ku).min(n - 1);
            let mut p = i;
            let mut best = self.data[self.offset(i, i)].abs();
            for r in i + 1..=last_row {
                let v = self.data[self.offset(r, i)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Solver {
                    reason: format!("singular band matrix at column {i}"),
                    residual: f64::NAN,
                });
            }
            piv[i] = p;
            if p != i {
                for c in i..=last_col {
                    let (a, b) = (self.offset(i, c), self.offset(p, c));
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.offset(i, i)];
            for r in i + 1..=last_row {
                let o = self.offset(r, i);
                let l = self.data[o] / d;
                if l == 0.0 {
                    continue;
                }
                self.data[o] = l;
                for c in i + 1..=last_col {
                    let u = self.data[self.offset(i, c)];
                    if u != 0.0 {
                        let t = self.offset(r, c);
                        self.data[t] -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.m.n, self.m.kl, self.m.ku);
        for i in 0..n {
            let p = self.piv[i];
            if p != i {
                b.swap(i, p);
            }
            let bi = b[i];
            if bi != 0.0 {
                for r in i + 1..=(i + kl).min(n - 1) {
                    b[r] -= self.m.data[self.m.offset(r, i)] * bi;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for c in i + 1..=(i + kl + ku).min(n - 1) {
                s -= self.m.data[self.m.offset(i, c)] * b[c];
            }
            b[i] = s / self.m.data[self.m.offset(i, i)];
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iter: usize,
    pub rtol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 60,
            max_iter: 2000,
            rtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresInfo {
    pub iterations: usize,
    pub residual: f64,
}

/// Restarted GMRES with right Jacobi preconditioning. `x` holds the initial
/// guess on entry. The returned residual is relative to `|b|`.
pub fn gmres<T: Scalar>(
    apply: impl FnMut(&[T], &mut [T]),
    b: &[T],
    x: &mut [T],
    diag: Option<&[T]>,
    opts: GmresOptions,
) -> Result<GmresInfo> {
    let precond = |v: &[T], out: &mut [T]| match diag {
        Some(d) => out
            .iter_mut()
            .zip(v)
            .zip(d)
            .for_each(|((o, vi), di)| *o = *vi / *di),
        None => out.copy_from_slice(v),
    };
    gmres_with(apply, b, x, precond, opts)
}

/// Restarted GMRES with an arbitrary right preconditioner `M^{-1}`.
pub fn gmres_with<T: Scalar>(
    mut apply: impl FnMut(&[T], &mut [T]),
    b: &[T],
    x: &mut [T],
    precond: impl Fn(&[T], &mut [T]),
    opts: GmresOptions,
) -> Result<GmresInfo> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.fill(T::zero());
        return Ok(GmresInfo {
            iterations: 0,
            residual: 0.0,
        });
    }
    let m = opts.restart.max(1);
    let mut r = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(m + 1);
    let mut its = 0;
    let mut rel;
    while its < opts.max_iter {
        apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = *bi - *ri;
        }
        let beta = norm2(&r);
        rel = beta / bnorm;
        if rel < opts.rtol {
            break;
        }
        basis.clear();
        basis.push(r.iter().map(|v| *v * T::from_real(1.0 / beta)).collect());
        let mut h = vec![vec![T::zero(); m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = T::from_real(beta);
        let mut used = 0;
        for j in 0..m {
            precond(&basis[j], &mut z);
            apply(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                h[i][j] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * *vk);
            }
            let hn = norm2(&w);
            h[j + 1][j] = T::from_real(hn);
            for i in 0..j {
                let (a, bb) = (h[i][j], h[i + 1][j]);
                h[i][j] = T::from_real(cs[i]) * a + sn[i] * bb;
                h[i + 1][j] = -sn[i].conj() * a + T::from_real(cs[i]) * bb;
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let t = (a.modulus().powi(2) + bb.modulus().powi(2)).sqrt();
            if a.modulus() == 0.0 {
                cs[j] = 0.0;
                sn[j] = T::from_real(1.0);
            } else {
                cs[j] = a.modulus() / t;
                sn[j] = a * T::from_real(1.0 / a.modulus()) * bb.conj() * T::from_real(1.0 / t);
            }
            h[j][j] = T::from_real(cs[j]) * a + sn[j] * bb;
            h[j + 1][j] = T::zero();
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] = T::from_real(cs[j]) * g[j];
            used = j + 1;
            its += 1;
            rel = g[j + 1].modulus() / bnorm;
            if rel < opts.rtol || its >= opts.max_iter || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| *v * T::from_real(1.0 / hn)).collect());
        }
        let mut y = vec![T::zero(); used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        w.fill(T::zero());
        for (yi, v) in y.iter().zip(&basis) {
            w.iter_mut().zip(v).for_each(|(wk, vk)| *wk += *yi * *vk);
        }
        precond(&w, &mut z);
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += *zi);
        if rel < opts.rtol {
            break;
        }
    }
    apply(x, &mut r);
    let true_rel = r
        .iter()
        .zip(b)
        .map(|(ri, bi)| (*bi - *ri).modulus().powi(2))
        .sum::<f64>()
        .sqrt()
        / bnorm;
    if true_rel > opts.rtol * 100.0 {
        return Err(Error::Solver {
            reason: format!("GMRES stalled after {its} iterations"),
            residual: true_rel,
        });
    }
    Ok(GmresInfo {
        iterations: its,
        residual: true_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.set(i, i, if i % 3 == 0 { 0.1 } else { 4.0 });
            if i > 0 {
                a.set(i, i - 1, -1.0 - 0.01 * i as f64);
            }
            if i + 1 < n {
                a.set(i, i + 1, 2.0);
            }
        }
        a
    }

    #[test]
    fn band_lu_solves() {
        let n = 40;
        let a = tridiag(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x, &mut b);
        let lu = a.clone().factor().unwrap();
        lu.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gmres_real_and_complex() {
        let n = 50;
        let a = tridiag(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x, &mut b);
        let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        let mut sol = vec![0.0; n];
        let info = gmres(
            |u, v| a.matvec(u, v),
            &b,
            &mut sol,
            Some(&diag),
            GmresOptions::default(),
        )
        .unwrap();
        assert!(info.residual < 1e-11);
        assert!(sol.iter().zip(&x).all(|(u, v)| (u - v).abs() < 1e-9));

        let shift = Complex64::new(0.0, 1.5);
        let apply = |u: &[Complex64], v: &mut [Complex64]| {
            let re: Vec<f64> = u.iter().map(|c| c.re).collect();
            let im: Vec<f64> = u.iter().map(|c| c.im).collect();
            let (mut ar, mut ai) = (vec![0.0; n], vec![0.0; n]);
            a.matvec(&re, &mut ar);
            a.matvec(&im, &mut ai);
            for k in 0..n {
                v[k] = Complex64::new(ar[k], ai[k]) + shift * u[k];
            }
        };
        let xc: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(i as f64, 1.0 - i as f64))
            .collect();
        let mut bc = vec![Complex64::zero(); n];
        apply(&xc, &mut bc);
        let mut sc = vec![Complex64::zero(); n];
        let opts = GmresOptions {
            restart: 10,
            ..Default::default()
        };
        gmres(apply, &bc, &mut sc, None, opts).unwrap();
        assert!(sc.iter().zip(&xc).all(|(u, v)| (u - v).norm() < 1e-8));
    }
}

//! Drude bath: spectral density, Padé decomposition of the Bose function and
//! the resulting exponential kernel, plus the Matsubara series used as an
//! oracle.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, HBAR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl BathSpec {
    pub fn new(eta: f64, gamma: f64, beta: f64) -> Result<Self> {
        let spec = Self { eta, gamma, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        // eta = 0 is allowed: it switches the bath off and several tests need it
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must be >= 0, got {}",
                self.eta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Poles `nu_j = xi_j / beta` and weights of the Padé expansion of
/// `coth(beta hbar omega / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadeDecomposition {
    pub beta: f64,
    pub nu: Vec<f64>,
    pub etabar: Vec<f64>,
}

impl PadeDecomposition {
    pub fn k(&self) -> usize {
        self.nu.len()
    }

    /// Matsubara frequencies with unit weights, same layout as a Padé result.
    pub fn matsubara(beta: f64, m: usize) -> Self {
        let nu = (1..=m)
            .map(|j| 2.0 * std::f64::consts::PI * j as f64 / (beta * HBAR))
            .collect();
        Self {
            beta,
            nu,
            etabar: vec![1.0; m],
        }
    }
}

/// Drude spectral density `(hbar eta / pi) gamma^2 omega / (gamma^2 + omega^2)`.
pub fn drude_sdf(spec: &BathSpec, omega: f64) -> f64 {
    let g2 = spec.gamma * spec.gamma;
    HBAR * spec.eta / std::f64::consts::PI * g2 * omega / (g2 + omega * omega)
}

/// Diagonal Padé approximant of `(x/2) coth(x/2)` in `x^2`, via the
/// eigenvalues of a symmetric tridiagonal matrix of size `2K`. The constant
/// remainder of the approximant is dropped, so the expansion reads
/// `coth(x/2) ~ 2/x + sum_j 4 etabar_j x / (x^2 + xi_j^2)`.
pub fn pade_decompose(beta: f64, k: usize) -> Result<PadeDecomposition> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    if k == 0 {
        return Ok(PadeDecomposition {
            beta,
            nu: vec![],
            etabar: vec![],
        });
    }
    let n = 2 * k;
    let mut lam = DMatrix::<f64>::zeros(n, n);
    for i in 0..n - 1 {
        let m = (i + 1) as f64;
        let b = 1.0 / ((2.0 * m + 1.0) * (2.0 * m + 3.0)).sqrt();
        lam[(i, i + 1)] = b;
        lam[(i + 1, i)] = b;
    }
    let eig = SymmetricEigen::new(lam);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .filter(|&j| eig.eigenvalues[j] > 0.0)
        .map(|j| {
            let mu = eig.eigenvalues[j];
            let v0 = eig.eigenvectors[(0, j)];
            (2.0 / mu, v0 * v0 / (3.0 * mu * mu))
        })
        .collect();
    if pairs.len() != k {
        return Err(Error::Solver {
            reason: format!(
                "expected {k} positive Padé eigenvalues, found {}",
                pairs.len()
            ),
            residual: f64::NAN,
        });
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(PadeDecomposition {
        beta,
        nu: pairs.iter().map(|p| p.0 / (beta * HBAR)).collect(),
        etabar: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Coefficients of the exponential kernel for one bath bound to a
/// decomposition. `nu[0] = gamma`; `coef[0] = c0`; `coef[j] = a_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTerms {
    pub nu: Vec<f64>,
    pub coef: Vec<f64>,
    /// Prefactor of the imaginary (dissipative) `e^{-gamma t}` term.
    pub im0: f64,
}

impl KernelTerms {
    pub fn new(spec: &BathSpec, pade: &PadeDecomposition) -> Self {
        let (eta, g, beta) = (spec.eta, spec.gamma, spec.beta);
        let g2 = g * g;
        let mut sum = 0.0;
        let mut nu = vec![g];
        let mut coef = vec![0.0];
        for (&nj, &ej) in pade.nu.iter().zip(&pade.etabar) {
            let den = g2 - nj * nj;
            sum += 2.0 * ej * g2 / den;
            nu.push(nj);
            coef.push(-(eta * g2 / beta) * 2.0 * ej * nj / den);
        }
        coef[0] = eta * g / beta * (1.0 + sum);
        Self {
            nu,
            coef,
            im0: eta * g2 / 2.0,
        }
    }

    pub fn c0(&self) -> f64 {
        self.coef[0]
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let t = t.abs();
        let re: f64 = self
            .nu
            .iter()
            .zip(&self.coef)
            .map(|(n, c)| c * (-n * t).exp())
            .sum();
        Complex64::new(re, self.im0 * (-self.nu[0] * t).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub t: f64,
    pub value: Complex64,
}

/// Padé kernel `L(t) = C(t) + i hbar eta gamma^2/2 e^{-gamma t}`.
pub fn kernel(spec: &BathSpec, pade: &PadeDecomposition, t: f64) -> KernelSample {
    KernelSample {
        t,
        value: KernelTerms::new(spec, pade).eval(t),
    }
}

/// Reference kernel: the `gamma` pole carries its exact `cot` residue and the
/// Bose poles are summed over the first `m` Matsubara frequencies.
pub fn matsubara_kernel(spec: &BathSpec, m: usize, t: f64) -> KernelSample {
    let (eta, g, beta) = (spec.eta, spec.gamma, spec.beta);
    let t = t.abs();
    let g2 = g * g;
    let mut re = eta * g2 / 2.0 / (beta * g / 2.0).tan() * (-g * t).exp();
    for j in 1..=m {
        let nj = 2.0 * std::f64::consts::PI * j as f64 / beta;
        re -= eta * g2 / beta * 2.0 * nj / (g2 - nj * nj) * (-nj * t).exp();
    }
    KernelSample {
        t,
        value: Complex64::new(re, eta * g2 / 2.0 * (-g * t).exp()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn sdf_values() {
        let s = BathSpec::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(drude_sdf(&s, 0.0), 0.0);
        assert_relative_eq!(drude_sdf(&s, 1.0), 1.0 / (2.0 * PI), max_relative = 1e-15);
        let s = BathSpec::new(0.01, 1.0, 1.0).unwrap();
        assert_relative_eq!(drude_sdf(&s, 2.0), 0.4e-2 / PI, max_relative = 1e-14);
        assert_eq!(drude_sdf(&s, -2.0), -drude_sdf(&s, 2.0));
    }

    #[test]
    fn pade_small_k() {
        let p = pade_decompose(1.0, 0).unwrap();
        assert!(p.nu.is_empty() && p.etabar.is_empty());
        let p = pade_decompose(1.0, 1).unwrap();
        assert_relative_eq!(p.nu[0], 60f64.sqrt(), max_relative = 1e-13);
        assert_relative_eq!(p.etabar[0], 2.5, max_relative = 1e-13);
        let p = pade_decompose(2.0, 1).unwrap();
        assert_relative_eq!(p.nu[0], 60f64.sqrt() / 2.0, max_relative = 1e-13);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(BathSpec::new(1.0, 0.0, 1.0).is_err());
        assert!(BathSpec::new(1.0, 1.0, -1.0).is_err());
        assert!(pade_decompose(0.0, 2).is_err());
    }

    #[test]
    fn kernel_at_origin() {
        let s = BathSpec::new(0.01, 1.0, 0.2).unwrap();
        let p = pade_decompose(0.2, 1).unwrap();
        let l = kernel(&s, &p, 0.0);
        assert_relative_eq!(l.value.im, 0.005, max_relative = 1e-15);
        let far = kernel(&s, &p, 200.0).value;
        assert!(far.norm() < 1e-60);
    }

    #[test]
    fn c0_matches_formula() {
        let s = BathSpec::new(0.3, 1.7, 2.5).unwrap();
        let p = pade_decompose(2.5, 3).unwrap();
        let t = KernelTerms::new(&s, &p);
        let sum: f64 =
            p.nu.iter()
                .zip(&p.etabar)
                .map(|(n, e)| 2.0 * e * 1.7f64.powi(2) / (1.7f64.powi(2) - n * n))
                .sum();
        assert_relative_eq!(t.c0(), 0.3 * 1.7 / 2.5 * (1.0 + sum), max_relative = 1e-14);
    }

    #[test]
    fn matsubara_partial_sums_differ_by_one_term() {
        let s = BathSpec::new(0.01, 1.0, 0.2).unwrap();
        let d = matsubara_kernel(&s, 2, 0.1).value - matsubara_kernel(&s, 1, 0.1).value;
        let n2 = 4.0 * PI / 0.2;
        let term = -0.01 / 0.2 * 2.0 * n2 / (1.0 - n2 * n2) * (-n2 * 0.1f64).exp();
        assert_relative_eq!(d.re, term, max_relative = 1e-9);
        assert_eq!(d.im, 0.0);
    }
}

//! Independent checks of the Padé decomposition and the kernel.

#![allow(clippy::needless_range_loop)]

use ringheom::bath::{kernel, matsubara_kernel, pade_decompose, BathSpec, PadeDecomposition};

/// Taylor coefficients of `z coth z` in `y = z^2`: `2^{2n} B_{2n} / (2n)!`.
const ZCOTHZ: [f64; 9] = [
    1.0,
    1.0 / 3.0,
    -1.0 / 45.0,
    2.0 / 945.0,
    -1.0 / 4725.0,
    2.0 / 93555.0,
    -1382.0 / 638512875.0,
    4.0 / 18243225.0,
    -3617.0 / 162820783125.0,
];

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

fn poly(c: &[f64], y: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * y + v)
}

/// `[K/K]` Padé of the Taylor series: poles `y_k < 0` and residues, found by
/// bracketing and bisection.
fn taylor_pade(k: usize) -> Vec<(f64, f64)> {
    let c = &ZCOTHZ;
    // denominator q_0 = 1, sum_j q_j c_{K+i-j} = 0 for i = 1..K
    let a: Vec<Vec<f64>> = (1..=k)
        .map(|i| (1..=k).map(|j| c[k + i - j]).collect())
        .collect();
    let b: Vec<f64> = (1..=k).map(|i| -c[k + i]).collect();
    let mut q = vec![1.0];
    q.extend(solve(a, b));
    let p: Vec<f64> = (0..=k)
        .map(|i| (0..=i).map(|j| q[j] * c[i - j]).sum())
        .collect();
    let dq: Vec<f64> = (1..q.len()).map(|i| i as f64 * q[i]).collect();
    let mut roots = Vec::new();
    let grid: Vec<f64> = (0..20000)
        .map(|i| -(10f64).powf(-1.0 + 6.0 * i as f64 / 20000.0))
        .collect();
    for w in grid.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        if poly(&q, lo).signum() == poly(&q, hi).signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if poly(&q, mid).signum() == poly(&q, lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let y = 0.5 * (lo + hi);
        roots.push((y, poly(&p, y) / poly(&dq, y)));
    }
    roots
}

#[test]
fn pade_matches_taylor_pade() {
    for k in 1..=4 {
        let beta = 1.7;
        let pade = pade_decompose(beta, k).unwrap();
        let mut oracle: Vec<(f64, f64)> = taylor_pade(k)
            .into_iter()
            .map(|(y, r)| (2.0 * (-y).sqrt() / beta, r / (2.0 * y)))
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(oracle.len(), k, "K={k}");
        for (j, (nu, eb)) in oracle.iter().enumerate() {
            assert!(
                (pade.nu[j] - nu).abs() < 1e-8 * nu,
                "K={k} nu_{j}: {} vs {nu}",
                pade.nu[j]
            );
            assert!(
                (pade.etabar[j] - eb).abs() < 1e-7 * eb.abs(),
                "K={k} etabar_{j}: {} vs {eb}",
                pade.etabar[j]
            );
        }
    }
}

#[test]
fn pade_k1_closed_form() {
    // [1/1] of z coth z is (1 + 2y/5) / (1 + y/15)
    let p = pade_decompose(1.0, 1).unwrap();
    assert!((p.nu[0] - 60f64.sqrt()).abs() < 1e-12);
    assert!((p.etabar[0] - 2.5).abs() < 1e-12);
}

#[test]
fn poles_sit_near_matsubara_frequencies() {
    // the lowest Padé poles converge to 2 pi j / beta as K grows
    let beta = 2.5;
    let p = pade_decompose(beta, 6).unwrap();
    for j in 0..2 {
        let m = 2.0 * std::f64::consts::PI * (j + 1) as f64 / beta;
        assert!((p.nu[j] - m).abs() < 1e-6 * m, "{} vs {m}", p.nu[j]);
        assert!((p.etabar[j] - 1.0).abs() < 1e-5, "{}", p.etabar[j]);
    }
}

#[test]
fn matsubara_sum_converges() {
    // partial sums differ by exactly one term; at small t the tail decays
    // once nu_M t exceeds one
    let spec = BathSpec::new(1.0, 1.0, 2.5).unwrap();
    let full = matsubara_kernel(&spec, 4000, 0.01).value.re;
    let errs: Vec<f64> = [10, 40, 160]
        .iter()
        .map(|&m| (matsubara_kernel(&spec, m, 0.01).value.re - full).abs())
        .collect();
    assert!(errs[1] < errs[0] && errs[2] < 1e-2 * errs[0], "{errs:?}");
    let t = 0.3;
    let m = 2.0 * std::f64::consts::PI * 3.0 / 2.5;
    let term = -(2.5f64.recip()) * 2.0 * m / (1.0 - m * m) * (-m * t).exp();
    let step = matsubara_kernel(&spec, 3, t).value.re - matsubara_kernel(&spec, 2, t).value.re;
    assert!((step - term).abs() < 1e-14);
}

#[test]
fn kernel_error_decreases_with_k() {
    // sup of the relative error over [0, 5]; the sup-norm of the absolute
    // error away from t = 0 is not monotone (K = 2 vs 3)
    let spec = BathSpec::new(1.0, 1.0, 2.5).unwrap();
    let ts: Vec<f64> = (0..=100).map(|i| 0.05 * i as f64).collect();
    let reference: Vec<f64> = ts
        .iter()
        .map(|&t| matsubara_kernel(&spec, 1000, t).value.re)
        .collect();
    let err = |p: &PadeDecomposition| {
        ts.iter()
            .zip(&reference)
            .map(|(&t, r)| ((kernel(&spec, p, t).value.re - r) / r).abs())
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = (0..=6)
        .map(|k| err(&pade_decompose(2.5, k).unwrap()))
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] <= w[0], "{errs:?}");
    }
    // the imaginary part is exact for any K
    let p = pade_decompose(2.5, 2).unwrap();
    for &t in &ts {
        assert_eq!(
            kernel(&spec, &p, t).value.im,
            matsubara_kernel(&spec, 10, t).value.im
        );
    }
}

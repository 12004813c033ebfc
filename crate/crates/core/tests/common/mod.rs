//! Dense reference computations shared by the integration tests.
//!
//! Nothing here goes through the FFT: covariances are summed directly from the
//! spectral density formula and every solve is a dense factorisation.

#![allow(dead_code)]

pub mod golden;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `σ² (1 + α² sin²(ω₁/2) + α² sin²(ω₂/2))⁻²` at frequency index `(j1, j2)`.
pub fn density(sigma2: f64, alpha: f64, n1: usize, n2: usize, j1: usize, j2: usize) -> f64 {
    let s1 = (PI * j1 as f64 / n1 as f64).sin().powi(2);
    let s2 = (PI * j2 as f64 / n2 as f64).sin().powi(2);
    sigma2 / (1.0 + alpha * alpha * (s1 + s2)).powi(2)
}

/// Covariance at every lag `(l1, l2)`, stored with `l1` fastest.
pub fn lag_covariance(sigma2: f64, alpha: f64, n1: usize, n2: usize) -> Vec<f64> {
    let n = (n1 * n2) as f64;
    let mut out = vec![0.0; n1 * n2];
    for l2 in 0..n2 {
        for l1 in 0..n1 {
            let mut acc = 0.0;
            for j2 in 0..n2 {
                for j1 in 0..n1 {
                    let phase = 2.0 * PI * ((j1 * l1) as f64 / n1 as f64 + (j2 * l2) as f64 / n2 as f64);
                    acc += density(sigma2, alpha, n1, n2, j1, j2) * phase.cos();
                }
            }
            out[l2 * n1 + l1] = acc / n;
        }
    }
    out
}

/// Dense `Σ` with torus wrap-around.
pub fn dense_sigma(sigma2: f64, alpha: f64, n1: usize, n2: usize) -> DMatrix<f64> {
    let c = lag_covariance(sigma2, alpha, n1, n2);
    let n = n1 * n2;
    DMatrix::from_fn(n, n, |a, b| {
        let (a1, a2) = (a % n1, a / n1);
        let (b1, b2) = (b % n1, b / n1);
        let l1 = (b1 + n1 - a1) % n1;
        let l2 = (b2 + n2 - a2) % n2;
        c[l2 * n1 + l1]
    })
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("SPD matrix").inverse()
}

pub fn log_det(m: &DMatrix<f64>) -> f64 {
    let l = m.clone().cholesky().expect("SPD matrix");
    2.0 * l.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Newton's method on `log p(W | Y)` with the exact dense Hessian, run to
/// machine precision.
pub fn dense_newton_mode(y: &[f64], delta: &[f64], mean: &[f64], sigma: &DMatrix<f64>) -> Vec<f64> {
    let n = y.len();
    let prec = inverse(sigma);
    let mut w: Vec<f64> = y.iter().zip(delta).map(|(yi, d)| ((yi + 0.5) / d).ln()).collect();
    for _ in 0..200 {
        let ew: Vec<f64> = w.iter().zip(delta).map(|(wi, d)| d * wi.exp()).collect();
        let r: Vec<f64> = w.iter().zip(mean).map(|(a, b)| a - b).collect();
        let pr = matvec(&prec, &r);
        let grad: Vec<f64> = (0..n).map(|i| y[i] - ew[i] - pr[i]).collect();
        let hess = &prec + DMatrix::from_diagonal(&DVector::from_column_slice(&ew));
        let step = hess.cholesky().expect("SPD Hessian").solve(&DVector::from_column_slice(&grad));
        for i in 0..n {
            w[i] += step[i];
        }
        if step.amax() < 1e-14 * (1.0 + w.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            break;
        }
    }
    w
}

/// Generalised least squares with a dense covariance.
pub fn dense_gls(w: &[f64], x: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Vec<f64> {
    let prec = inverse(sigma);
    let a = x.transpose() * &prec * x;
    let b = x.transpose() * &prec * DVector::from_column_slice(w);
    a.cholesky().unwrap().solve(&b).as_slice().to_vec()
}

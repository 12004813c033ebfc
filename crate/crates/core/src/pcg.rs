//! Jacobi-preconditioned conjugate gradient for implicit SPD operators.

use crate::error::{check_len, Result, SlemError};

/// A symmetric positive definite operator known through its products.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `A v`.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// Diagonal of `A`, used as the Jacobi preconditioner.
    fn diagonal(&self) -> Vec<f64>;
}

/// Operator given by a closure plus its diagonal.
pub struct FnOperator<F> {
    apply: F,
    diag: Vec<f64>,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    pub fn new(apply: F, diag: Vec<f64>) -> Self {
        FnOperator { apply, diag }
    }
}

impl<F> LinearOperator for FnOperator<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        (self.apply)(v)
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}

/// Stopping tolerance on the RMS change of the residual between iterations.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// `10 √n` capped at 2000.
pub fn default_max_iter(n: usize) -> usize {
    ((10.0 * (n as f64).sqrt()).ceil() as usize).clamp(1, 2000)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` starting from `x0`.
///
/// Stops when `sqrt(mean((r_{k+1} - r_k)²)) <= epsilon`, when the residual is
/// below `1e-12 ‖b‖`, or after `max_iter` iterations (then `converged` is
/// false and the last iterate is returned). A non-finite iterate means the
/// operator is not SPD and is reported as an error.
pub fn pcg_solve<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    x0: &[f64],
    epsilon: f64,
    max_iter: usize,
) -> Result<PcgSolution> {
    let n = op.dim();
    check_len("pcg right-hand side", n, b.len())?;
    check_len("pcg starting value", n, x0.len())?;
    if !(epsilon > 0.0) || max_iter == 0 {
        return Err(SlemError::InvalidInput(format!(
            "pcg needs epsilon > 0 and max_iter >= 1, got {epsilon} and {max_iter}"
        )));
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| {
            if d > 0.0 && d.is_finite() {
                Ok(1.0 / d)
            } else {
                Err(SlemError::Numerical(format!("non-positive preconditioner entry {d}")))
            }
        })
        .collect::<Result<_>>()?;

    let b_norm = norm(b);
    let exact = |r: &[f64]| norm(r) <= 1e-12 * b_norm;

    let mut x = x0.to_vec();
    let ax = op.apply(&x)?;
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    if exact(&r) {
        return Ok(PcgSolution {
            x,
            iterations: 0,
            converged: true,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, m)| ri * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for k in 1..=max_iter {
        let ap = op.apply(&p)?;
        let step = rz / dot(&p, &ap);
        if !step.is_finite() {
            return Err(SlemError::Numerical(format!(
                "pcg step length {step} at iteration {k}; operator is not SPD"
            )));
        }
        let mut change2 = 0.0;
        for i in 0..n {
            x[i] += step * p[i];
            let dr = step * ap[i];
            r[i] -= dr;
            change2 += dr * dr;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SlemError::Numerical(format!(
                "non-finite pcg iterate at iteration {k}; operator is not SPD"
            )));
        }
        if (change2 / n as f64).sqrt() <= epsilon || exact(&r) {
            return Ok(PcgSolution {
                x,
                iterations: k,
                converged: true,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(PcgSolution {
        x,
        iterations: max_iter,
        converged: false,
    })
}

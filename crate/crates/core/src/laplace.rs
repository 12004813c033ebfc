//! Posterior mode of the working field and its Laplace approximation.
//!
//! For `W = Xβ + Z` the log posterior, up to a constant, is
//! `Σ_i [Y_i W_i − Δ_i exp(W_i)] − ½ (W − Xβ)ᵀ Σ⁻¹ (W − Xβ)`. Its negative
//! Hessian is `Σ⁻¹ + diag(Δ ∘ exp(W))`, which is what the Newton steps solve
//! against with PCG.

use crate::error::{check_len, Result};
use crate::pcg::{default_max_iter, pcg_solve, LinearOperator, DEFAULT_EPSILON};
use crate::spectral::SpectralField;

/// Upper clamp on `W_i` before exponentiation.
pub const EXP_CLAMP: f64 = 50.0;

/// `Δ ∘ exp(min(W, 50))` and the number of clamped entries.
pub fn curvature(w: &[f64], delta: &[f64]) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let c = w
        .iter()
        .zip(delta)
        .map(|(&wi, &d)| {
            if wi > EXP_CLAMP {
                clamped += 1;
            }
            d * wi.min(EXP_CLAMP).exp()
        })
        .collect();
    (c, clamped)
}

fn check_inputs(w: &[f64], y: &[f64], delta: &[f64], xbeta: &[f64], f: &SpectralField) -> Result<()> {
    let n = f.len();
    check_len("latent field", n, w.len())?;
    check_len("counts", n, y.len())?;
    check_len("pixel areas", n, delta.len())?;
    check_len("linear predictor", n, xbeta.len())
}

/// Gradient of the log posterior: `Y − Δ ∘ exp(W) − Σ⁻¹ (W − Xβ)`.
pub fn posterior_score(
    w: &[f64],
    y: &[f64],
    delta: &[f64],
    xbeta: &[f64],
    f: &SpectralField,
) -> Result<Vec<f64>> {
    check_inputs(w, y, delta, xbeta, f)?;
    let resid: Vec<f64> = w.iter().zip(xbeta).map(|(a, b)| a - b).collect();
    let prior = f.sigma_inv_matvec(&resid)?;
    let (c, _) = curvature(w, delta);
    Ok((0..w.len()).map(|i| y[i] - c[i] - prior[i]).collect())
}

/// Log posterior of `W` up to an additive constant.
pub fn log_posterior(
    w: &[f64],
    y: &[f64],
    delta: &[f64],
    xbeta: &[f64],
    f: &SpectralField,
) -> Result<f64> {
    check_inputs(w, y, delta, xbeta, f)?;
    let resid: Vec<f64> = w.iter().zip(xbeta).map(|(a, b)| a - b).collect();
    let prior = f.sigma_inv_matvec(&resid)?;
    let (c, _) = curvature(w, delta);
    let mut lp = 0.0;
    for i in 0..w.len() {
        lp += y[i] * w[i] - c[i] - 0.5 * resid[i] * prior[i];
    }
    Ok(lp)
}

/// The posterior precision `Σ⁻¹ + diag(c)`.
pub struct PrecisionOperator<'a> {
    f: &'a SpectralField,
    c: &'a [f64],
    prior_diag: f64,
}

impl<'a> PrecisionOperator<'a> {
    pub fn new(f: &'a SpectralField, c: &'a [f64]) -> Result<Self> {
        check_len("curvature", f.len(), c.len())?;
        Ok(PrecisionOperator {
            f,
            c,
            prior_diag: f.inverse_diagonal(),
        })
    }
}

impl LinearOperator for PrecisionOperator<'_> {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.f.sigma_inv_matvec(v)?;
        for ((o, &ci), &vi) in out.iter_mut().zip(self.c).zip(v) {
            *o += ci * vi;
        }
        Ok(out)
    }

    fn diagonal(&self) -> Vec<f64> {
        self.c.iter().map(|ci| self.prior_diag + ci).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on `n^{-1/2} ‖W_{l+1} − W_l‖`.
    pub epsilon: f64,
    pub max_newton: usize,
    pub pcg_epsilon: f64,
    /// `None` uses [`default_max_iter`].
    pub pcg_max_iter: Option<usize>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            epsilon: 1e-3,
            max_newton: 50,
            pcg_epsilon: DEFAULT_EPSILON,
            pcg_max_iter: None,
        }
    }
}

/// Mode of `p(W | Y, θ)` with the curvature that defines the Laplace approximation
/// `W | Y ~ N(mode, (Σ⁻¹ + diag(c_diag))⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceFit {
    pub mode: Vec<f64>,
    pub c_diag: Vec<f64>,
    pub newton_iterations: usize,
    pub converged: bool,
    /// Evaluations where some `W_i` exceeded [`EXP_CLAMP`].
    pub clamp_events: usize,
    /// Inner solves that hit their iteration cap.
    pub pcg_unconverged: usize,
}

/// Damped Newton–Raphson for the posterior mode, warm-started at `w_init`.
///
/// A step that lowers the log posterior is halved, at most ten times.
pub fn newton_mode(
    y: &[f64],
    delta: &[f64],
    xbeta: &[f64],
    f: &SpectralField,
    w_init: &[f64],
    opts: &NewtonOptions,
) -> Result<LaplaceFit> {
    check_inputs(w_init, y, delta, xbeta, f)?;
    let n = f.len();
    let pcg_max = opts.pcg_max_iter.unwrap_or_else(|| default_max_iter(n));
    let zeros = vec![0.0; n];

    let mut w = w_init.to_vec();
    let mut lp = log_posterior(&w, y, delta, xbeta, f)?;
    let mut clamp_events = 0;
    let mut pcg_unconverged = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_newton {
        iterations += 1;
        let (c, clamped) = curvature(&w, delta);
        clamp_events += usize::from(clamped > 0);
        let score = posterior_score(&w, y, delta, xbeta, f)?;
        let op = PrecisionOperator::new(f, &c)?;
        let sol = pcg_solve(&op, &score, &zeros, opts.pcg_epsilon, pcg_max)?;
        pcg_unconverged += usize::from(!sol.converged);

        let mut t = 1.0;
        let mut candidate: Vec<f64>;
        let mut lp_candidate;
        let mut halvings = 0;
        loop {
            candidate = w.iter().zip(&sol.x).map(|(wi, si)| wi + t * si).collect();
            lp_candidate = log_posterior(&candidate, y, delta, xbeta, f)?;
            if lp_candidate >= lp || halvings == 10 {
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        let moved = t * sol.x.iter().map(|s| s * s).sum::<f64>().sqrt() / (n as f64).sqrt();
        w = candidate;
        lp = lp_candidate;
        if moved < opts.epsilon {
            converged = true;
            break;
        }
    }

    let (c_diag, clamped) = curvature(&w, delta);
    clamp_events += usize::from(clamped > 0);
    Ok(LaplaceFit {
        mode: w,
        c_diag,
        newton_iterations: iterations,
        converged,
        clamp_events,
        pcg_unconverged,
    })
}

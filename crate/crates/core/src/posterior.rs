//! Latent-field recovery and approximate posterior intensity means.
//!
//! Under the Laplace approximation `Z | Y` is Gaussian with mean `Z*` and
//! precision `Ψ = Σ⁻¹ + diag(Δ ∘ exp(W*))`, so `E[exp(Z_j) | Y] = exp(Z*_j + ½ Ψ⁻¹_jj)`.
//! The diagonal of `Ψ⁻¹` is approximated pixel by pixel by inverting `Ψ`
//! restricted to the `k x k` neighbourhood around the pixel, wrapping around
//! the torus at the edges.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::linear_predictor;
use crate::error::{check_len, Result, SlemError};
use crate::laplace::curvature;
use crate::spectral::SpectralField;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityEstimate {
    pub z_mode: Vec<f64>,
    pub local_var: Vec<f64>,
    pub latent_mean: Vec<f64>,
    /// Per unit area; divide by the observation window for a rate in time as well.
    pub intensity: Vec<f64>,
}

/// `Z* = W* − Xβ*`.
pub fn recover_z(w_star: &[f64], x: &DMatrix<f64>, beta_star: &[f64]) -> Result<Vec<f64>> {
    check_len("design rows", w_star.len(), x.nrows())?;
    let xb = linear_predictor(x, beta_star)?;
    Ok(w_star.iter().zip(&xb).map(|(w, m)| w - m).collect())
}

/// Diagonal likelihood curvature `Δ ∘ exp(W*)` entering `Ψ`.
pub fn psi_diagonal(w_star: &[f64], delta: &[f64]) -> Result<Vec<f64>> {
    check_len("delta", w_star.len(), delta.len())?;
    Ok(curvature(w_star, delta).0)
}

/// Approximates `diag(Ψ⁻¹)` with `k x k` wrap-around neighbourhoods.
pub fn local_variance(f_star: &SpectralField, psi_diag: &[f64], k: usize) -> Result<Vec<f64>> {
    let (n1, n2) = (f_star.n1(), f_star.n2());
    check_len("psi diagonal", f_star.len(), psi_diag.len())?;
    if k % 2 == 0 || k == 0 || k > n1.min(n2) {
        return Err(SlemError::InvalidInput(format!(
            "neighbourhood size k must be odd and between 1 and {}, got {k}",
            n1.min(n2)
        )));
    }
    if let Some(bad) = psi_diag.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(SlemError::InvalidInput(format!("psi diagonal entry {bad} is not a finite non-negative value")));
    }
    let inv_row = f_star.inverse_base_row()?;
    let h = (k / 2) as isize;
    let offsets: Vec<(isize, isize)> = (-h..=h).flat_map(|d2| (-h..=h).map(move |d1| (d1, d2))).collect();
    let centre = offsets.len() / 2;
    let wrap = |i: usize, d: isize, n: usize| ((i as isize + d).rem_euclid(n as isize)) as usize;

    (0..f_star.len())
        .into_par_iter()
        .map(|j| {
            let (i1, i2) = (j % n1, j / n1);
            let members: Vec<usize> = offsets
                .iter()
                .map(|&(d1, d2)| wrap(i2, d2, n2) * n1 + wrap(i1, d1, n1))
                .collect();
            let m = members.len();
            let block = DMatrix::from_fn(m, m, |a, b| {
                let (pa, pb) = (members[a], members[b]);
                let v = inv_row[f_star.lag_index(pa, pb)];
                if a == b {
                    v + psi_diag[pa]
                } else {
                    v
                }
            });
            let chol = block.cholesky().ok_or_else(|| {
                SlemError::Numerical(format!("neighbourhood precision at pixel {j} is not positive definite"))
            })?;
            let mut e = DVector::zeros(m);
            e[centre] = 1.0;
            let v = chol.solve(&e)[centre];
            if !(v.is_finite() && v >= 0.0) {
                return Err(SlemError::Numerical(format!("local variance {v} at pixel {j}")));
            }
            Ok(v)
        })
        .collect()
}

/// Log-normal mean correction and intensity on the natural scale.
pub fn intensity_mean(
    z_mode: &[f64],
    local_var: &[f64],
    xbeta_star: &[f64],
    delta: &[f64],
) -> Result<IntensityEstimate> {
    let n = z_mode.len();
    check_len("local variance", n, local_var.len())?;
    check_len("linear predictor", n, xbeta_star.len())?;
    check_len("delta", n, delta.len())?;
    let latent_mean: Vec<f64> = z_mode
        .iter()
        .zip(local_var)
        .map(|(z, v)| (z + 0.5 * v).exp())
        .collect();
    let intensity = latent_mean.iter().zip(xbeta_star).map(|(m, xb)| xb.exp() * m).collect();
    Ok(IntensityEstimate {
        z_mode: z_mode.to_vec(),
        local_var: local_var.to_vec(),
        latent_mean,
        intensity,
    })
}

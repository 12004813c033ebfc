//! Held-out log score and log-intensity RMSE.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_len, Result, SlemError};
use crate::grid::{CountGrid, GridSpec};

/// Ratio of test to training points for a 90/10 split.
pub const DEFAULT_SCALE: f64 = 1.0 / 9.0;
pub const DEFAULT_MARGIN: usize = 2;

/// Which intensity is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    /// Mode plus half the local variance on the log scale.
    #[default]
    PosteriorMean,
    /// `exp(W*)`.
    Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub log_score: f64,
    /// `None` when no true intensity is available.
    pub rmse_full: Option<f64>,
    pub rmse_interior: Option<f64>,
    pub runtime_seconds: f64,
    pub intensity: IntensityKind,
    pub train_points: usize,
    pub test_points: usize,
}

/// Poisson log-likelihood of held-out counts under the scaled training intensity:
/// `Σ_i Y_i (log Δ_i + log λ_i + log s) − s Δ_i λ_i − log Y_i!`.
pub fn log_score(y_test: &CountGrid, lambda_hat: &[f64], delta: &[f64], scale: f64) -> Result<f64> {
    let n = y_test.values().len();
    check_len("intensity", n, lambda_hat.len())?;
    check_len("delta", n, delta.len())?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(SlemError::InvalidInput(format!("scale must be positive, got {scale}")));
    }
    if let Some(l) = lambda_hat.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(SlemError::InvalidInput(format!("intensity {l} is not positive and finite")));
    }
    let ln_scale = scale.ln();
    Ok(y_test
        .values()
        .iter()
        .zip(lambda_hat)
        .zip(delta)
        .map(|((&y, &l), &d)| {
            let mean = scale * d * l;
            if y == 0 {
                -mean
            } else {
                let y = y as f64;
                y * (d.ln() + l.ln() + ln_scale) - mean - ln_gamma(y + 1.0)
            }
        })
        .sum())
}

/// RMSE of `est` against `truth` over all pixels, and over pixels at least
/// `margin` pixels away from every edge.
pub fn rmse_log_intensity(est: &[f64], truth: &[f64], grid: &GridSpec, margin: usize) -> Result<(f64, f64)> {
    check_len("estimate", grid.len(), est.len())?;
    check_len("truth", grid.len(), truth.len())?;
    let (n1, n2) = (grid.n1(), grid.n2());
    if 2 * margin >= n1 || 2 * margin >= n2 {
        return Err(SlemError::InvalidInput(format!(
            "margin {margin} leaves no interior on a {n1}x{n2} grid"
        )));
    }
    let mut full = 0.0;
    let mut interior = 0.0;
    let mut count = 0usize;
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            let j = grid.index(i1, i2);
            let e2 = (est[j] - truth[j]).powi(2);
            full += e2;
            if i1 >= margin && i1 < n1 - margin && i2 >= margin && i2 < n2 - margin {
                interior += e2;
                count += 1;
            }
        }
    }
    debug_assert_eq!(count, interior_count(grid, margin));
    Ok(((full / grid.len() as f64).sqrt(), (interior / count as f64).sqrt()))
}

/// Pixels counted by the interior RMSE.
pub fn interior_count(grid: &GridSpec, margin: usize) -> usize {
    grid.n1().saturating_sub(2 * margin) * grid.n2().saturating_sub(2 * margin)
}

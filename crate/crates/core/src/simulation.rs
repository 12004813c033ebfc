//! Synthetic datasets from the model.
//!
//! A scenario fixes the latent field and the covariates once; replicates differ
//! only in the Poisson counts drawn on top of the shared intensity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMatrix;
use crate::em::linear_predictor;
use crate::error::{check_len, Result, SlemError};
use crate::grid::{CountGrid, GridSpec};
use crate::raster::Raster;
use crate::spectral::{quasi_matern_shape, quasi_matern_spectrum, CovParams};

const Z_STREAM: u64 = 0;
const X_STREAM: u64 = 1;
const Y_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSource {
    /// Independent standard normal rasters, one per slope in `beta_true`.
    StandardNormal,
    /// Rasters used as given.
    Supplied(Vec<Raster>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub grid: GridSpec,
    pub eta_true: CovParams,
    /// Intercept first.
    pub beta_true: Vec<f64>,
    pub covariate_source: CovariateSource,
    pub replicates: usize,
    pub seed: u64,
}

/// Everything shared by the replicates of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub covariates: Vec<Raster>,
    pub x: CovariateMatrix,
    pub z_true: Vec<f64>,
    pub log_lambda_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub y: CountGrid,
    pub truth: SimTruth,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(SlemError::Config("replicates must be at least 1".into()));
        }
        if self.beta_true.is_empty() {
            return Err(SlemError::Config("beta_true needs at least an intercept".into()));
        }
        if let Some(b) = self.beta_true.iter().find(|b| !b.is_finite()) {
            return Err(SlemError::Config(format!("beta_true holds {b}")));
        }
        if let CovariateSource::Supplied(cols) = &self.covariate_source {
            check_len("supplied covariates", self.beta_true.len() - 1, cols.len())?;
        }
        self.eta_true.validate()
    }

    /// The latent field, covariates and true log-intensity.
    pub fn truth(&self) -> Result<SimTruth> {
        self.validate()?;
        let grid = &self.grid;
        let f = quasi_matern_spectrum(&self.eta_true, grid)?;
        let mut z_rng = ChaCha8Rng::seed_from_u64(self.seed);
        z_rng.set_stream(Z_STREAM);
        let z_true = f.sample_gp_with(&mut z_rng)?;

        let p = self.beta_true.len() - 1;
        let (covariates, x) = match &self.covariate_source {
            CovariateSource::StandardNormal => {
                let mut x_rng = ChaCha8Rng::seed_from_u64(self.seed);
                x_rng.set_stream(X_STREAM);
                let cols = (0..p)
                    .map(|_| {
                        let v = (0..grid.len()).map(|_| StandardNormal.sample(&mut x_rng)).collect();
                        Raster::on_grid(grid, v)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let x = CovariateMatrix::raw(grid, &cols)?;
                (cols, x)
            }
            CovariateSource::Supplied(cols) => (cols.clone(), CovariateMatrix::raw(grid, cols)?),
        };
        let xb = linear_predictor(&x.x, &self.beta_true)?;
        let log_lambda_true = xb.iter().zip(&z_true).map(|(a, b)| a + b).collect();
        Ok(SimTruth {
            covariates,
            x,
            z_true,
            log_lambda_true,
        })
    }

    /// Counts for one replicate given the shared truth.
    pub fn sample_counts(&self, truth: &SimTruth, replicate_index: usize) -> Result<CountGrid> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(replicate_index as u64));
        rng.set_stream(Y_STREAM);
        let delta = self.grid.delta();
        let counts = truth
            .log_lambda_true
            .iter()
            .zip(&delta)
            .map(|(l, d)| {
                let mean = d * l.exp();
                if !mean.is_finite() {
                    return Err(SlemError::Numerical(format!("Poisson mean {mean} overflows")));
                }
                Ok(sample_poisson(&mut rng, mean))
            })
            .collect::<Result<Vec<_>>>()?;
        CountGrid::new(self.grid.n1(), self.grid.n2(), counts)
    }
}

/// One full replicate.
pub fn simulate_dataset(scenario: &SimScenario, replicate_index: usize) -> Result<SimDataset> {
    let truth = scenario.truth()?;
    let y = scenario.sample_counts(&truth, replicate_index)?;
    Ok(SimDataset { y, truth })
}

/// Below this mean, Poisson variates come from sequential inversion.
pub const POISSON_INVERSION_CUTOFF: f64 = 30.0;

/// Draws a Poisson variate: inversion for small means, transformed rejection
/// with squeeze (Hörmann's PTRS) otherwise.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < POISSON_INVERSION_CUTOFF {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            let next = cdf + p;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        return k;
    }
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * loglam - statrs::function::gamma::ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// `K₁(x)` for `x > 0`, from `∫₀^∞ exp(−x cosh t) cosh t dt` by the trapezoid rule.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k1 needs a positive argument");
    let h = 1e-3;
    // Beyond t_max the integrand is below exp(-700).
    let t_max = (700.0 / x).acosh().max(1.0);
    let steps = (t_max / h).ceil() as usize;
    let g = |t: f64| (-x * t.cosh()).exp() * t.cosh();
    let mut acc = 0.5 * (g(0.0) + g(steps as f64 * h));
    for i in 1..steps {
        acc += g(i as f64 * h);
    }
    acc * h
}

/// Matérn correlation with smoothness 1: `(h/ρ) K₁(h/ρ)`, equal to 1 at `h = 0`.
pub fn matern1_correlation(h: f64, range: f64) -> f64 {
    if h == 0.0 {
        return 1.0;
    }
    let s = h.abs() / range;
    s * bessel_k1(s)
}

/// Quasi-Matérn parameters standing in for a Matérn field with smoothness 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub eta: CovParams,
    pub lag: usize,
    pub target_correlation: f64,
    pub achieved_correlation: f64,
}

/// Correlation of the circulant quasi-Matérn field at `lag` pixels along the first axis.
pub fn quasi_matern_correlation(alpha: f64, grid: &GridSpec, lag: usize) -> f64 {
    let g = quasi_matern_shape(alpha, grid.n1(), grid.n2());
    // Only the first-axis lag is needed: Cov(l, 0) = (1/n) Σ g cos(2π j1 l / n1).
    let n1 = grid.n1();
    let mut c0 = 0.0;
    let mut cl = 0.0;
    for (idx, gv) in g.iter().enumerate() {
        let j1 = idx % n1;
        c0 += gv;
        cl += gv * (2.0 * std::f64::consts::PI * ((j1 * lag) % n1) as f64 / n1 as f64).cos();
    }
    cl / c0
}

/// Chooses `α` so the quasi-Matérn correlation at `lag = round(range)` pixels
/// equals the Matérn (smoothness 1) correlation there, and `σ²` so the marginal
/// variance equals `variance`.
pub fn calibrate_to_matern(grid: &GridSpec, variance: f64, range: f64) -> Result<Calibration> {
    let lag = range.round() as usize;
    if lag == 0 || 2 * lag >= grid.n1() {
        return Err(SlemError::InvalidInput(format!(
            "range {range} must be at least 1 and under half of n1 = {}",
            grid.n1()
        )));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(SlemError::InvalidInput(format!("variance must be positive, got {variance}")));
    }
    let target = matern1_correlation(lag as f64, range);
    let corr = |a: f64| quasi_matern_correlation(a, grid, lag);
    let (mut lo, mut hi) = (1e-3, 1.0);
    while corr(hi) < target {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(SlemError::Numerical("range calibration did not bracket the target".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if corr(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let g = quasi_matern_shape(alpha, grid.n1(), grid.n2());
    let mean_g = g.iter().sum::<f64>() / g.len() as f64;
    Ok(Calibration {
        eta: CovParams::new(variance / mean_g, alpha)?,
        lag,
        target_correlation: target,
        achieved_correlation: corr(alpha),
    })
}

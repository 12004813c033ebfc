//! Circulant quasi-Matérn covariance in spectral form.
//!
//! The covariance between pixels at lag `h` is
//!
//! ```text
//! Cov(h) = (1/n) Σ_ω f(ω) exp(i ω·h),
//! f(ω)   = σ² (1 + α² sin²(ω₁/2) + α² sin²(ω₂/2))⁻²,
//! ```
//!
//! over the Fourier frequencies `ω = (2π j₁/n₁, 2π j₂/n₂)`. With the forward DFT
//! `F` unscaled, `Σ = (1/n) F* diag(f) F`, so the eigenvalues of `Σ` are exactly
//! the `f(ω)` and every product with `Σ`, `Σ^{1/2}` or `Σ⁻¹` costs two FFTs.
//! Opposite edges of the lattice are neighbours.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SlemError};
use crate::fft::Fft2d;
use crate::grid::GridSpec;

/// Covariance parameters `η = (σ², α)`; `α` is measured in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovParams {
    pub sigma2: f64,
    pub alpha: f64,
}

impl CovParams {
    /// `α = 0` is accepted and gives white noise with variance `σ²`.
    pub fn new(sigma2: f64, alpha: f64) -> Result<Self> {
        let eta = CovParams { sigma2, alpha };
        eta.validate()?;
        Ok(eta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(SlemError::InvalidInput(format!(
                "sigma2 must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SlemError::InvalidInput(format!(
                "alpha must be non-negative and finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Spectral density evaluated at the Fourier frequencies of an `n1 x n2` lattice,
/// stored in the canonical raster layout (frequency index `j1` fastest).
#[derive(Clone)]
pub struct SpectralField {
    n1: usize,
    n2: usize,
    values: Vec<f64>,
    plan: Arc<Fft2d>,
}

impl std::fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralField")
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("values", &self.values)
            .finish()
    }
}

/// `sin²(ω/2)` at the `n` Fourier frequencies of one axis.
fn half_angle_sin2(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| (PI * j as f64 / n as f64).sin().powi(2))
        .collect()
}

/// The unit-variance quasi-Matérn shape `g_α(ω) = (1 + α² sin²(ω₁/2) + α² sin²(ω₂/2))⁻²`.
pub fn quasi_matern_shape(alpha: f64, n1: usize, n2: usize) -> Vec<f64> {
    let s1 = half_angle_sin2(n1);
    let s2 = half_angle_sin2(n2);
    let a2 = alpha * alpha;
    let mut g = Vec::with_capacity(n1 * n2);
    for b in &s2 {
        for a in &s1 {
            g.push((1.0 + a2 * a + a2 * b).powi(-2));
        }
    }
    g
}

/// Spectral density of the circulant quasi-Matérn covariance on `grid`.
pub fn quasi_matern_spectrum(eta: &CovParams, grid: &GridSpec) -> Result<SpectralField> {
    eta.validate()?;
    let mut values = quasi_matern_shape(eta.alpha, grid.n1(), grid.n2());
    values.iter_mut().for_each(|g| *g *= eta.sigma2);
    SpectralField::from_values(grid.n1(), grid.n2(), values)
}

impl SpectralField {
    pub fn from_values(n1: usize, n2: usize, values: Vec<f64>) -> Result<Self> {
        check_len("spectral field", n1 * n2, values.len())?;
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(SlemError::InvalidInput(format!(
                "spectral density must be positive and finite, found {bad}"
            )));
        }
        Ok(SpectralField {
            n1,
            n2,
            values,
            plan: Fft2d::plan(n1, n2),
        })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `c·f`, i.e. the covariance scaled by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        SpectralField::from_values(self.n1, self.n2, self.values.iter().map(|v| v * c).collect())
    }

    /// Flat index of the lag from pixel `a` to pixel `b`, wrapping around both axes.
    #[inline]
    pub fn lag_index(&self, a: usize, b: usize) -> usize {
        let (a1, a2) = (a % self.n1, a / self.n1);
        let (b1, b2) = (b % self.n1, b / self.n1);
        let l1 = (b1 + self.n1 - a1) % self.n1;
        let l2 = (b2 + self.n2 - a2) % self.n2;
        l2 * self.n1 + l1
    }

    /// `Σ v`.
    pub fn sigma_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("sigma_matvec input", self.len(), v.len())?;
        self.plan.filter(v, &self.values)
    }

    /// `Σ⁻¹ v`.
    pub fn sigma_inv_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("sigma_inv_matvec input", self.len(), v.len())?;
        let inv: Vec<f64> = self.values.iter().map(|f| 1.0 / f).collect();
        self.plan.filter(v, &inv)
    }

    /// `log |Σ| = Σ_ω log f(ω)`.
    pub fn log_det(&self) -> f64 {
        self.values.iter().map(|f| f.ln()).sum()
    }

    /// Covariance at every lag: the first row of `Σ`.
    pub fn covariance_base(&self) -> Result<Vec<f64>> {
        let mut e0 = vec![0.0; self.len()];
        e0[0] = 1.0;
        self.sigma_matvec(&e0)
    }

    /// First row of `Σ⁻¹`; `(Σ⁻¹)_{ab}` is the entry at `lag_index(a, b)`.
    pub fn inverse_base_row(&self) -> Result<Vec<f64>> {
        let mut e0 = vec![0.0; self.len()];
        e0[0] = 1.0;
        self.sigma_inv_matvec(&e0)
    }

    /// Diagonal entry shared by every pixel of `Σ⁻¹`, i.e. `mean(1/f)`.
    pub fn inverse_diagonal(&self) -> f64 {
        self.values.iter().map(|f| 1.0 / f).sum::<f64>() / self.len() as f64
    }

    /// Exact draw from `N(0, Σ)` as `Σ^{1/2} ε` with `ε` i.i.d. standard normal.
    pub fn sample_gp(&self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_gp_with(&mut rng)
    }

    pub fn sample_gp_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let eps: Vec<f64> = (0..self.len()).map(|_| StandardNormal.sample(rng)).collect();
        let root: Vec<f64> = self.values.iter().map(|f| f.sqrt()).collect();
        self.plan.filter(&eps, &root)
    }

    /// Dense `Σ` assembled from the direct spectral sum. Test oracle only.
    pub fn dense_covariance(&self) -> Result<DMatrix<f64>> {
        const MAX_PIXELS: usize = 4096;
        let n = self.len();
        if n > MAX_PIXELS {
            return Err(SlemError::InvalidInput(format!(
                "dense covariance limited to {MAX_PIXELS} pixels, got {n}"
            )));
        }
        let base = self.direct_spectral_sum(|f| f);
        Ok(DMatrix::from_fn(n, n, |a, b| base[self.lag_index(a, b)]))
    }

    /// `(1/n) Σ_ω h(f(ω)) cos(ω·lag)` at every lag, by direct summation.
    pub(crate) fn direct_spectral_sum(&self, h: impl Fn(f64) -> f64) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        let n = (n1 * n2) as f64;
        let mut out = vec![0.0; n1 * n2];
        for l2 in 0..n2 {
            for l1 in 0..n1 {
                let mut acc = 0.0;
                for j2 in 0..n2 {
                    for j1 in 0..n1 {
                        let phase = 2.0
                            * PI
                            * (((j1 * l1) % n1) as f64 / n1 as f64
                                + ((j2 * l2) % n2) as f64 / n2 as f64);
                        acc += h(self.values[j2 * n1 + j1]) * phase.cos();
                    }
                }
                out[l2 * n1 + l1] = acc / n;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn field(n1: usize, n2: usize, sigma2: f64, alpha: f64) -> SpectralField {
        quasi_matern_spectrum(&CovParams::new(sigma2, alpha).unwrap(), &GridSpec::unit(n1, n2).unwrap())
            .unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn zero_frequency_is_sigma2_and_zero_range_is_white() {
        let f = field(6, 5, 1.7, 3.0);
        assert_eq!(f.values()[0], 1.7);
        let w = field(6, 5, 1.7, 0.0);
        assert!(w.values().iter().all(|&v| v == 1.7));
        let v = random_vec(30, 1);
        let out = w.sigma_matvec(&v).unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - 1.7 * b).abs() < 1e-12);
        }
        let out = w.sigma_inv_matvec(&v).unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b / 1.7).abs() < 1e-12);
        }
        let row = w.inverse_base_row().unwrap();
        assert!((row[0] - 1.0 / 1.7).abs() < 1e-14);
        assert!(row[1..].iter().all(|x| x.abs() < 1e-14));
        assert!((w.log_det() - 30.0 * 1.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn spectrum_is_symmetric_under_negation() {
        let f = field(7, 6, 2.0, 4.5);
        for j2 in 0..6 {
            for j1 in 0..7 {
                let neg = ((6 - j2) % 6) * 7 + (7 - j1) % 7;
                assert!((f.values()[j2 * 7 + j1] - f.values()[neg]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn variance_on_seventy_grid_matches_spectral_sum() {
        let f = field(70, 70, 2.0, 18.0);
        let fft_base = f.covariance_base().unwrap();
        let direct = f.values().iter().sum::<f64>() / f.len() as f64;
        assert!((fft_base[0] - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn matvecs_match_dense_oracle() {
        let f = field(6, 6, 1.5, 3.0);
        let sigma = f.dense_covariance().unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let v = random_vec(36, 5);
        let dv = nalgebra::DVector::from_vec(v.clone());
        let dense = (&sigma * &dv).as_slice().to_vec();
        assert!(rel_err(&f.sigma_matvec(&v).unwrap(), &dense) < 1e-10);
        let dense_inv = (&inv * &dv).as_slice().to_vec();
        assert!(rel_err(&f.sigma_inv_matvec(&v).unwrap(), &dense_inv) < 1e-9);
        let row = f.inverse_base_row().unwrap();
        for a in 0..36 {
            for b in 0..36 {
                assert!((row[f.lag_index(a, b)] - inv[(a, b)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_vector_gives_first_column() {
        let f = field(5, 4, 1.0, 2.0);
        let mut e = vec![0.0; 20];
        e[0] = 1.0;
        let col = f.sigma_matvec(&e).unwrap();
        let direct = f.direct_spectral_sum(|x| x);
        for (a, b) in col.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_composition_and_scaling() {
        let f = field(8, 6, 2.0, 4.0);
        let v = random_vec(48, 9);
        let back = f.sigma_inv_matvec(&f.sigma_matvec(&v).unwrap()).unwrap();
        assert!(rel_err(&back, &v) < 1e-9);
        let c = 3.5;
        let scaled = f.scaled(c).unwrap();
        assert!((scaled.log_det() - f.log_det() - 48.0 * c.ln()).abs() < 1e-10);
    }

    #[test]
    fn log_det_matches_dense_cholesky() {
        let f = field(8, 8, 2.0, 4.0);
        let chol = f.dense_covariance().unwrap().cholesky().unwrap();
        let dense: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        assert!(((f.log_det() - dense) / dense).abs() < 1e-8);
    }

    #[test]
    fn dense_covariance_properties() {
        let f = field(6, 6, 1.5, 3.0);
        let s = f.dense_covariance().unwrap();
        assert!((&s - s.transpose()).amax() < 1e-12);
        let eig = s.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
        let cov0 = f.values().iter().sum::<f64>() / 36.0;
        assert!((s[(0, 0)] - cov0).abs() < 1e-12);
        assert!(field(65, 64, 1.0, 1.0).dense_covariance().is_err());
    }

    #[test]
    fn wrap_around_lags_agree() {
        let f = field(9, 7, 1.0, 3.0);
        let base = f.covariance_base().unwrap();
        assert!((base[8] - base[1]).abs() < 1e-14);
        assert!((base[6 * 9] - base[9]).abs() < 1e-14);
        let row = f.inverse_base_row().unwrap();
        for a in 0..63 {
            let neg = f.lag_index(a, 0);
            assert!((row[a] - row[neg]).abs() < 1e-12 * row[0].abs());
        }
    }

    #[test]
    fn operator_is_linear_and_self_adjoint() {
        let f = field(10, 8, 1.3, 2.5);
        let u = random_vec(80, 2);
        let v = random_vec(80, 3);
        let (a, b) = (0.7, -1.9);
        let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let lhs = f.sigma_matvec(&comb).unwrap();
        let su = f.sigma_matvec(&u).unwrap();
        let sv = f.sigma_matvec(&v).unwrap();
        let rhs: Vec<f64> = su.iter().zip(&sv).map(|(x, y)| a * x + b * y).collect();
        assert!(rel_err(&lhs, &rhs) < 1e-10);
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let (l, r) = (dot(&u, &sv), dot(&su, &v));
        assert!((l - r).abs() < 1e-10 * l.abs().max(r.abs()));
        for seed in 0..20 {
            let w = random_vec(80, 100 + seed);
            assert!(dot(&w, &f.sigma_inv_matvec(&w).unwrap()) > 0.0);
        }
    }

    #[test]
    fn white_noise_samples_have_sigma2_variance() {
        let f = field(100, 100, 2.5, 0.0);
        let z = f.sample_gp(17).unwrap();
        let var = z.iter().map(|x| x * x).sum::<f64>() / z.len() as f64;
        assert!((var / 2.5 - 1.0).abs() < 0.05, "var = {var}");
        assert_eq!(z, f.sample_gp(17).unwrap());
        assert_ne!(z, f.sample_gp(18).unwrap());
    }

    #[test]
    fn sampled_lag_covariance_matches_spectral_sum() {
        let f = field(16, 16, 1.0, 3.0);
        let base = f.covariance_base().unwrap();
        let lags = [0usize, 1, 2, 16, 17];
        let reps = 500;
        let mut stats = vec![Vec::with_capacity(reps); lags.len()];
        for r in 0..reps {
            let z = f.sample_gp(1000 + r as u64).unwrap();
            for (k, &lag) in lags.iter().enumerate() {
                // Average over all pixel pairs at this lag within one field.
                let mut acc = 0.0;
                for a in 0..256 {
                    let (a1, a2) = (a % 16, a / 16);
                    let (l1, l2) = (lag % 16, lag / 16);
                    let b = ((a2 + l2) % 16) * 16 + (a1 + l1) % 16;
                    acc += z[a] * z[b];
                }
                stats[k].push(acc / 256.0);
            }
        }
        for (k, &lag) in lags.iter().enumerate() {
            let m = stats[k].iter().sum::<f64>() / reps as f64;
            let var = stats[k].iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            assert!((m - base[lag]).abs() < 3.0 * se, "lag {lag}: {m} vs {}", base[lag]);
        }
    }
}

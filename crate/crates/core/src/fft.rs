//! Two-dimensional DFTs on the canonical raster layout.
//!
//! Forward transforms are unscaled; [`Fft2d::filter`] applies the `1/n` of the
//! inverse so that it computes `(1/n) F* diag(m) F v`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SlemError};

pub(crate) struct Fft2d {
    n1: usize,
    n2: usize,
    fwd1: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
    fwd2: Arc<dyn Fft<f64>>,
    inv2: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2d({}x{})", self.n1, self.n2)
    }
}

static PLANS: OnceLock<Mutex<HashMap<(usize, usize), Arc<Fft2d>>>> = OnceLock::new();

impl Fft2d {
    /// Shared plan for an `n1 x n2` lattice.
    pub(crate) fn plan(n1: usize, n2: usize) -> Arc<Fft2d> {
        let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut cache = cache.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry((n1, n2))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2d {
                    n1,
                    n2,
                    fwd1: planner.plan_fft_forward(n1),
                    inv1: planner.plan_fft_inverse(n1),
                    fwd2: planner.plan_fft_forward(n2),
                    inv2: planner.plan_fft_inverse(n2),
                })
            })
            .clone()
    }

    pub(crate) fn len(&self) -> usize {
        self.n1 * self.n2
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (along1, along2) = if inverse {
            (&self.inv1, &self.inv2)
        } else {
            (&self.fwd1, &self.fwd2)
        };
        // Axis 1 is contiguous.
        along1.process(data);
        if self.n2 > 1 {
            let mut t = vec![Complex64::default(); data.len()];
            transpose(data, &mut t, self.n1, self.n2);
            along2.process(&mut t);
            transpose(&t, data, self.n2, self.n1);
        }
    }

    /// Unscaled forward DFT of a real raster.
    pub(crate) fn forward_real(&self, v: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    /// Inverse DFT including the `1/n` factor, returning the real part after
    /// checking that the imaginary residual is at rounding level.
    pub(crate) fn inverse_to_real(&self, mut data: Vec<Complex64>, scale_hint: f64) -> Result<Vec<f64>> {
        self.transform(&mut data, true);
        let n = self.len() as f64;
        let max_imag = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs())) / n;
        let tol = 1e-10 * scale_hint.max(f64::MIN_POSITIVE);
        if max_imag > tol {
            return Err(SlemError::Numerical(format!(
                "imaginary residual {max_imag:e} exceeds {tol:e} after inverse DFT"
            )));
        }
        Ok(data.into_iter().map(|c| c.re / n).collect())
    }

    /// `(1/n) F* diag(mult) F v` for real `v` and a real, symmetric multiplier.
    pub(crate) fn filter(&self, v: &[f64], mult: &[f64]) -> Result<Vec<f64>> {
        let mut data = self.forward_real(v);
        for (d, &m) in data.iter_mut().zip(mult) {
            *d *= m;
        }
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mmax = mult.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.inverse_to_real(data, vnorm * mmax.max(1.0))
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_direct_sum() {
        let (n1, n2) = (4, 3);
        let v: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = Fft2d::plan(n1, n2).forward_real(&v);
        for j2 in 0..n2 {
            for j1 in 0..n1 {
                let mut acc = Complex64::default();
                for i2 in 0..n2 {
                    for i1 in 0..n1 {
                        let phase = -2.0 * std::f64::consts::PI
                            * ((j1 * i1) as f64 / n1 as f64 + (j2 * i2) as f64 / n2 as f64);
                        acc += Complex64::from_polar(v[i2 * n1 + i1], phase);
                    }
                }
                assert!((acc - out[j2 * n1 + j1]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_filter_is_identity() {
        let v: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let out = Fft2d::plan(5, 6).filter(&v, &[1.0; 30]).unwrap();
        for (a, b) in v.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

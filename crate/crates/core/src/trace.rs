//! Hutchinson estimation of `tr(Σ_η⁻¹ (Σ_{η_t}⁻¹ + C_t)⁻¹)`.
//!
//! The probes `v_i` and the solves `u_i = (Σ_{η_t}⁻¹ + C_t)⁻¹ v_i` depend only
//! on the current iterate, so they are computed once and then reused for every
//! candidate `η` within an M-step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Result, SlemError};
use crate::laplace::PrecisionOperator;
use crate::pcg::{default_max_iter, pcg_solve};
use crate::spectral::SpectralField;

/// Rademacher probes paired with their posterior-precision solves.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePairs {
    pub v: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Number of solves that stopped at the PCG iteration cap.
    pub unconverged: usize,
}

impl ProbePairs {
    pub fn count(&self) -> usize {
        self.v.len()
    }
}

/// Draws `m` Rademacher vectors and solves the posterior-precision system for each.
pub fn make_probes(
    m: usize,
    seed: u64,
    f_t: &SpectralField,
    c_diag: &[f64],
    pcg_epsilon: f64,
    pcg_max_iter: Option<usize>,
) -> Result<ProbePairs> {
    if m == 0 {
        return Err(SlemError::InvalidInput("probe count must be at least 1".into()));
    }
    let n = f_t.len();
    check_len("curvature", n, c_diag.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let op = PrecisionOperator::new(f_t, c_diag)?;
    let max_iter = pcg_max_iter.unwrap_or_else(|| default_max_iter(n));
    let zeros = vec![0.0; n];
    let mut u = Vec::with_capacity(m);
    let mut unconverged = 0;
    for vi in &v {
        let sol = pcg_solve(&op, vi, &zeros, pcg_epsilon, max_iter)?;
        unconverged += usize::from(!sol.converged);
        u.push(sol.x);
    }
    Ok(ProbePairs { v, u, unconverged })
}

/// `(1/M) Σ_i v_iᵀ Σ⁻¹ u_i` with `Σ` given by `f_candidate`.
pub fn trace_term(f_candidate: &SpectralField, probes: &ProbePairs) -> Result<f64> {
    let mut acc = 0.0;
    for (v, u) in probes.v.iter().zip(&probes.u) {
        let su = f_candidate.sigma_inv_matvec(u)?;
        acc += v.iter().zip(&su).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc / probes.count() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::spectral::{quasi_matern_spectrum, CovParams};
    use nalgebra::{DMatrix, DVector};

    fn field(n: usize, sigma2: f64, alpha: f64) -> SpectralField {
        quasi_matern_spectrum(&CovParams::new(sigma2, alpha).unwrap(), &GridSpec::unit(n, n).unwrap()).unwrap()
    }

    #[test]
    fn probes_are_rademacher_and_reproducible() {
        let f = field(6, 1.0, 2.0);
        let c = vec![0.5; 36];
        let a = make_probes(3, 9, &f, &c, 1e-6, None).unwrap();
        assert!(a.v.iter().flatten().all(|x| *x == 1.0 || *x == -1.0));
        assert_eq!(a, make_probes(3, 9, &f, &c, 1e-6, None).unwrap());
        assert_ne!(a.v, make_probes(3, 10, &f, &c, 1e-6, None).unwrap().v);
        assert!(make_probes(0, 9, &f, &c, 1e-6, None).is_err());
    }

    #[test]
    fn huge_curvature_gives_scaled_probes() {
        let f = field(5, 1.0, 2.0);
        let c = vec![1e12; 25];
        let p = make_probes(2, 1, &f, &c, 1e-3, None).unwrap();
        for (v, u) in p.v.iter().zip(&p.u) {
            for (a, b) in v.iter().zip(u) {
                assert!((b - a / 1e12).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn solves_match_dense() {
        let f = field(6, 1.5, 3.0);
        let c: Vec<f64> = (0..36).map(|i| 0.2 + 0.05 * i as f64).collect();
        let p = make_probes(4, 3, &f, &c, 1e-8, Some(500)).unwrap();
        let prec = f.dense_covariance().unwrap().try_inverse().unwrap()
            + DMatrix::from_diagonal(&DVector::from_vec(c));
        let chol = prec.cholesky().unwrap();
        for (v, u) in p.v.iter().zip(&p.u) {
            let exact = chol.solve(&DVector::from_column_slice(v));
            let err = (DVector::from_column_slice(u) - exact).amax();
            assert!(err < 1e-5);
        }
    }

    #[test]
    fn identity_product_is_exactly_n() {
        // With C = 0 the solve gives u = Σ v, and vᵀ Σ⁻¹ Σ v = vᵀ v = n.
        let f = field(6, 1.0, 1.5);
        let c = vec![0.0; 36];
        let p = make_probes(5, 4, &f, &c, 1e-12, Some(1000)).unwrap();
        let t = trace_term(&f, &p).unwrap();
        assert!((t - 36.0).abs() < 1e-8, "{t}");
    }

    #[test]
    fn doubling_variance_halves_trace() {
        let f = field(8, 1.2, 2.5);
        let p = make_probes(3, 5, &f, &vec![0.3; 64], 1e-6, None).unwrap();
        let t1 = trace_term(&f, &p).unwrap();
        let t2 = trace_term(&f.scaled(2.0).unwrap(), &p).unwrap();
        assert!((t2 - 0.5 * t1).abs() < 1e-12 * t1.abs());
    }

    #[test]
    fn variance_shrinks_with_more_probes() {
        let f = field(6, 1.0, 2.0);
        let c = vec![0.4; 36];
        let spread = |m: usize| {
            let vals: Vec<f64> = (0..100)
                .map(|s| trace_term(&f, &make_probes(m, 1000 + s, &f, &c, 1e-6, None).unwrap()).unwrap())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        assert!(spread(10) < spread(1));
    }
}

//! The EM driver.
//!
//! Each iteration finds the Laplace mode `W_t` at the current parameters,
//! draws Hutchinson probes against the posterior precision at that mode, and
//! then increases the approximate objective
//!
//! ```text
//! Q̃(θ | θ_t) = −½ [ log|Σ_η| + (W_t − Xβ)ᵀ Σ_η⁻¹ (W_t − Xβ) + (1/M) Σ_i v_iᵀ Σ_η⁻¹ u_i ]
//! ```
//!
//! first in `β` (generalised least squares at `η_t`) and then in `η`. Because
//! `Σ_η = σ² G_α`, the `η` update profiles out `σ²` in closed form and searches
//! only over `α`; the remaining quadratic forms are evaluated in the Fourier
//! domain, so each candidate `α` costs `O(n)`.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SlemError};
use crate::fft::Fft2d;
use crate::grid::{CountGrid, GridSpec};
use crate::laplace::{newton_mode, LaplaceFit, NewtonOptions};
use crate::spectral::{quasi_matern_spectrum, CovParams, SpectralField};
use crate::trace::{make_probes, trace_term, ProbePairs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Update `β` and `η` in every M-step.
    #[default]
    Joint,
    /// Fix `β` at a one-time GLS estimate and update only `η`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Number of Hutchinson probes per iteration.
    #[serde(rename = "M")]
    pub m: usize,
    pub scheme: Scheme,
    pub eps_em: f64,
    pub eps_newton: f64,
    pub eps_pcg: f64,
    pub max_em: usize,
    pub max_newton: usize,
    /// Search interval for `α` in pixels; `None` means `(0.01, n1)`.
    pub alpha_bounds: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            m: 1,
            scheme: Scheme::Joint,
            eps_em: 1e-5,
            eps_newton: 1e-3,
            eps_pcg: 1e-3,
            max_em: 100,
            max_newton: 50,
            alpha_bounds: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(SlemError::Config("M must be at least 1".into()));
        }
        for (name, v) in [
            ("eps_em", self.eps_em),
            ("eps_newton", self.eps_newton),
            ("eps_pcg", self.eps_pcg),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SlemError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_em == 0 || self.max_newton == 0 {
            return Err(SlemError::Config("max_em and max_newton must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.alpha_bounds {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(SlemError::Config(format!("invalid alpha bounds ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn bounds_for(&self, grid: &GridSpec) -> (f64, f64) {
        self.alpha_bounds
            .unwrap_or((1e-2, (grid.n1() as f64).max(1e-2 * 2.0)))
    }

    fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            epsilon: self.eps_newton,
            max_newton: self.max_newton,
            pcg_epsilon: self.eps_pcg,
            pcg_max_iter: None,
        }
    }
}

/// Full parameter vector `θ = (β, η)`, intercept first in `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub eta: CovParams,
}

impl Theta {
    /// `(β, σ², α)` flattened, the vector the convergence criterion is taken over.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.eta.sigma2);
        v.push(self.eta.alpha);
        v
    }

    /// RMS difference between two parameter vectors of equal length.
    pub fn rms_change(&self, other: &Theta) -> f64 {
        let a = self.to_vec();
        let b = other.to_vec();
        let ss: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        (ss / a.len() as f64).sqrt()
    }
}

/// `X β` as a raster.
pub fn linear_predictor(x: &DMatrix<f64>, beta: &[f64]) -> Result<Vec<f64>> {
    check_len("coefficients", x.ncols(), beta.len())?;
    if x.ncols() == 0 {
        return Ok(vec![0.0; x.nrows()]);
    }
    Ok((x * DVector::from_column_slice(beta)).as_slice().to_vec())
}

/// The approximate objective `Q̃(θ | θ_t; M)`, with the trace term dropped when
/// `probes` is `None`.
pub fn q_tilde(
    theta: &Theta,
    w_mode: &[f64],
    x: &DMatrix<f64>,
    probes: Option<&ProbePairs>,
    grid: &GridSpec,
) -> Result<f64> {
    check_len("mode", grid.len(), w_mode.len())?;
    check_len("design rows", grid.len(), x.nrows())?;
    let f = quasi_matern_spectrum(&theta.eta, grid)?;
    let xb = linear_predictor(x, &theta.beta)?;
    let r: Vec<f64> = w_mode.iter().zip(&xb).map(|(w, m)| w - m).collect();
    let quad: f64 = r.iter().zip(f.sigma_inv_matvec(&r)?).map(|(a, b)| a * b).sum();
    let trace = match probes {
        Some(p) => trace_term(&f, p)?,
        None => 0.0,
    };
    Ok(-0.5 * (f.log_det() + quad + trace))
}

/// Generalised least squares of `w_mode` on the columns of `x` with error
/// covariance `Σ` given by `f_t`.
pub fn update_beta(w_mode: &[f64], x: &DMatrix<f64>, f_t: &SpectralField) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    check_len("mode", n, w_mode.len())?;
    check_len("design rows", f_t.len(), n)?;
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut whitened = DMatrix::zeros(n, p);
    for j in 0..p {
        let col = f_t.sigma_inv_matvec(x.column(j).as_slice())?;
        whitened.column_mut(j).copy_from_slice(&col);
    }
    let normal = x.transpose() * &whitened;
    let rhs = whitened.transpose() * DVector::from_column_slice(w_mode);
    if let Some(columns) = dependent_columns(&normal) {
        return Err(SlemError::SingularDesign { columns });
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| SlemError::Numerical("GLS normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// Columns participating in a (numerical) linear dependence of the normal matrix.
pub(crate) fn dependent_columns(normal: &DMatrix<f64>) -> Option<Vec<usize>> {
    let p = normal.nrows();
    let scale: Vec<f64> = (0..p).map(|j| normal[(j, j)].max(0.0).sqrt()).collect();
    if let Some(j) = scale.iter().position(|&s| s == 0.0 || !s.is_finite()) {
        return Some(vec![j]);
    }
    let corr = DMatrix::from_fn(p, p, |i, j| normal[(i, j)] / (scale[i] * scale[j]));
    let eig = corr.symmetric_eigen();
    let mut cols = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < 1e-10 * p as f64 {
            let v = eig.eigenvectors.column(k);
            cols.extend((0..p).filter(|&j| v[j].abs() > 1e-6));
        }
    }
    if cols.is_empty() {
        return None;
    }
    cols.sort_unstable();
    cols.dedup();
    Some(cols)
}

/// How the range parameter is chosen in [`update_eta`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSearch {
    Fixed(f64),
    Bounded { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaUpdate {
    pub eta: CovParams,
    /// `Q̃` at the returned `η` (for the residual the update was given).
    pub objective: f64,
    pub alpha_at_bound: bool,
    /// Candidates where `rᵀG⁻¹r + trace` was not positive and had to be skipped.
    pub infeasible: usize,
}

/// `Q̃` as a function of `η` for a fixed residual and fixed probes, in Fourier form.
///
/// With `P(ω) = (1/n)[|R(ω)|² + (1/M) Σ_i Re(conj(V_i(ω)) U_i(ω))]`, where capital
/// letters are DFTs, `rᵀ G_α⁻¹ r + (1/M) Σ v_iᵀ G_α⁻¹ u_i = Σ_ω P(ω) / g_α(ω)`.
pub struct EtaObjective {
    power: Vec<f64>,
    sin2: Vec<f64>,
    n: f64,
}

impl EtaObjective {
    pub fn new(r: &[f64], probes: Option<&ProbePairs>, grid: &GridSpec) -> Result<Self> {
        let n = grid.len();
        check_len("residual", n, r.len())?;
        let plan = Fft2d::plan(grid.n1(), grid.n2());
        let rf = plan.forward_real(r);
        let mut power: Vec<f64> = rf.iter().map(|c| c.norm_sqr()).collect();
        if let Some(p) = probes {
            let m = p.count() as f64;
            for (v, u) in p.v.iter().zip(&p.u) {
                check_len("probe", n, v.len())?;
                let vf = plan.forward_real(v);
                let uf = plan.forward_real(u);
                for ((acc, a), b) in power.iter_mut().zip(&vf).zip(&uf) {
                    let cross: Complex64 = a.conj() * b;
                    *acc += cross.re / m;
                }
            }
        }
        power.iter_mut().for_each(|x| *x /= n as f64);
        let (n1, n2) = (grid.n1(), grid.n2());
        let s = |k: usize, len: usize| (std::f64::consts::PI * k as f64 / len as f64).sin().powi(2);
        let mut sin2 = Vec::with_capacity(n);
        for j2 in 0..n2 {
            for j1 in 0..n1 {
                sin2.push(s(j1, n1) + s(j2, n2));
            }
        }
        Ok(EtaObjective {
            power,
            sin2,
            n: n as f64,
        })
    }

    /// `(Σ_ω P(ω)/g_α(ω), Σ_ω log g_α(ω))`.
    fn sums(&self, alpha: f64) -> (f64, f64) {
        let a2 = alpha * alpha;
        let mut s = 0.0;
        let mut logdet = 0.0;
        for (p, s2) in self.power.iter().zip(&self.sin2) {
            let b = 1.0 + a2 * s2;
            s += p * b * b;
            logdet -= 2.0 * b.ln();
        }
        (s, logdet)
    }

    /// `Q̃` at `η`.
    pub fn value(&self, eta: &CovParams) -> f64 {
        let (s, logdet) = self.sums(eta.alpha);
        -0.5 * (self.n * eta.sigma2.ln() + logdet + s / eta.sigma2)
    }

    /// Profiled `Q̃` at `α`, with the maximising `σ²`; `None` when the quadratic
    /// term is not positive and no maximiser exists.
    pub fn profiled(&self, alpha: f64) -> Option<(f64, f64)> {
        let (s, logdet) = self.sums(alpha);
        if !(s > 0.0 && s.is_finite()) {
            return None;
        }
        let sigma2 = s / self.n;
        Some((-0.5 * (self.n * sigma2.ln() + logdet + self.n), sigma2))
    }
}

/// Maximises `Q̃(β_{t+1}, η)` over `η` for the residual `r = W_t − Xβ_{t+1}`.
///
/// `σ²` is profiled out exactly. For a bounded search the profile in `log α` is
/// scanned on a coarse grid and then refined by golden-section search; the
/// incumbent `α`, when given and inside the bounds, is always among the
/// candidates so the result never scores below it.
pub fn update_eta(
    r: &[f64],
    probes: Option<&ProbePairs>,
    grid: &GridSpec,
    search: AlphaSearch,
    incumbent: Option<&CovParams>,
) -> Result<EtaUpdate> {
    let obj = EtaObjective::new(r, probes, grid)?;
    let mut infeasible = 0;
    let mut eval = |alpha: f64| match obj.profiled(alpha) {
        Some(v) => Some(v),
        None => {
            infeasible += 1;
            None
        }
    };

    let (alpha, alpha_at_bound) = match search {
        AlphaSearch::Fixed(a) => (a, false),
        AlphaSearch::Bounded { lo, hi } => {
            if !(lo > 0.0 && hi > lo) {
                return Err(SlemError::InvalidInput(format!("invalid alpha bounds ({lo}, {hi})")));
            }
            let (llo, lhi) = (lo.ln(), hi.ln());
            const SCAN: usize = 33;
            let grid_pts: Vec<f64> = (0..SCAN)
                .map(|k| llo + (lhi - llo) * k as f64 / (SCAN - 1) as f64)
                .collect();
            let values: Vec<f64> = grid_pts
                .iter()
                .map(|&la| eval(la.exp()).map_or(f64::NEG_INFINITY, |v| v.0))
                .collect();
            let best = (0..SCAN)
                .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            let mut a = grid_pts[best.saturating_sub(1)];
            let mut b = grid_pts[(best + 1).min(SCAN - 1)];
            let mut best_la = grid_pts[best];
            let mut best_val = values[best];
            let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
            let score = |la: f64, eval: &mut dyn FnMut(f64) -> Option<(f64, f64)>| {
                eval(la.exp()).map_or(f64::NEG_INFINITY, |v| v.0)
            };
            let mut c = b - inv_phi * (b - a);
            let mut d = a + inv_phi * (b - a);
            let mut fc = score(c, &mut eval);
            let mut fd = score(d, &mut eval);
            while (b - a) > 1e-4 * (1.0 + best_la.abs()) {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - inv_phi * (b - a);
                    fc = score(c, &mut eval);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + inv_phi * (b - a);
                    fd = score(d, &mut eval);
                }
            }
            for (la, v) in [(c, fc), (d, fd)] {
                if v > best_val {
                    best_val = v;
                    best_la = la;
                }
            }
            if let Some(inc) = incumbent {
                if inc.alpha >= lo && inc.alpha <= hi {
                    let v = score(inc.alpha.ln(), &mut eval);
                    if v > best_val {
                        best_la = inc.alpha.ln();
                    }
                }
            }
            let alpha = best_la.exp().clamp(lo, hi);
            let at_bound = (alpha / lo - 1.0).abs() < 1e-3 || (1.0 - alpha / hi).abs() < 1e-3;
            (alpha, at_bound)
        }
    };

    let eta = match eval(alpha) {
        Some((_, sigma2)) => CovParams::new(sigma2, alpha)?,
        None => match incumbent {
            // No finite maximiser anywhere: keep the current parameters.
            Some(inc) => *inc,
            None => {
                return Err(SlemError::Numerical(
                    "quadratic term of the objective is not positive".into(),
                ))
            }
        },
    };
    Ok(EtaUpdate {
        eta,
        objective: obj.value(&eta),
        alpha_at_bound,
        infeasible,
    })
}

/// Counters accumulated over a fit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub newton_clamp_events: usize,
    pub newton_unconverged: usize,
    pub pcg_unconverged: usize,
    pub alpha_at_bound: usize,
    pub infeasible_eta_candidates: usize,
    /// M-steps whose proposal did not increase `Q̃` and were replaced by `θ_t`.
    pub mstep_reverted: usize,
}

impl Diagnostics {
    fn absorb_mode(&mut self, fit: &LaplaceFit) {
        self.newton_clamp_events += fit.clamp_events;
        self.newton_unconverged += usize::from(!fit.converged);
        self.pcg_unconverged += fit.pcg_unconverged;
    }
}

/// One EM iteration as seen from outside.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub iteration: usize,
    pub theta_before: Theta,
    pub theta_after: Theta,
    pub mode: LaplaceFit,
    pub probes: ProbePairs,
    /// `Q̃(θ_t | θ_t; M)`.
    pub q_before: f64,
    /// `Q̃(θ_{t+1} | θ_t; M)`.
    pub q_after: f64,
    pub reverted: bool,
    /// RMS change of `θ` over this iteration.
    pub change: f64,
}

/// Per-iteration entry of the objective trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub q_before: f64,
    pub q_after: f64,
    pub change: f64,
    pub newton_iterations: usize,
    pub theta: Theta,
}

impl From<&StepOutcome> for IterationRecord {
    fn from(s: &StepOutcome) -> Self {
        IterationRecord {
            iteration: s.iteration,
            q_before: s.q_before,
            q_after: s.q_after,
            change: s.change,
            newton_iterations: s.mode.newton_iterations,
            theta: s.theta_after.clone(),
        }
    }
}

/// Mutable state of one EM run.
pub struct EmState<'a> {
    y: Vec<f64>,
    delta: Vec<f64>,
    x: &'a DMatrix<f64>,
    grid: GridSpec,
    config: FitConfig,
    scheme: Scheme,
    probe_seed: u64,
    theta: Theta,
    w: Vec<f64>,
    iteration: usize,
    fixed_beta: Option<Vec<f64>>,
    diagnostics: Diagnostics,
}

impl<'a> EmState<'a> {
    /// Starts EM at `theta0` with the Newton iterations warm-started at `w0`.
    pub fn new(
        y: &CountGrid,
        x: &'a DMatrix<f64>,
        grid: &GridSpec,
        config: &FitConfig,
        theta0: Theta,
        w0: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        y.check_grid(grid)?;
        check_len("design rows", grid.len(), x.nrows())?;
        check_len("coefficients", x.ncols(), theta0.beta.len())?;
        check_len("starting field", grid.len(), w0.len())?;
        theta0.eta.validate()?;
        Ok(EmState {
            y: y.as_f64(),
            delta: grid.delta(),
            x,
            grid: *grid,
            config: config.clone(),
            scheme: config.scheme,
            probe_seed: config.seed,
            theta: theta0,
            w: w0,
            iteration: 0,
            fixed_beta: None,
            diagnostics: Diagnostics::default(),
        })
    }

    fn with_probe_seed(mut self, seed: u64) -> Self {
        self.probe_seed = seed;
        self
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn latest_mode(&self) -> &[f64] {
        &self.w
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// Runs one E-step and M-step.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let t = self.iteration;
        let f_t = quasi_matern_spectrum(&self.theta.eta, &self.grid)?;
        let xb = linear_predictor(self.x, &self.theta.beta)?;
        let mode = newton_mode(&self.y, &self.delta, &xb, &f_t, &self.w, &self.config.newton_options())?;
        self.diagnostics.absorb_mode(&mode);

        let probes = make_probes(
            self.config.m,
            self.probe_seed.wrapping_add(t as u64),
            &f_t,
            &mode.c_diag,
            self.config.eps_pcg,
            None,
        )?;
        self.diagnostics.pcg_unconverged += probes.unconverged;

        let q_before = q_tilde(&self.theta, &mode.mode, self.x, Some(&probes), &self.grid)?;

        let beta = match self.scheme {
            Scheme::Joint => update_beta(&mode.mode, self.x, &f_t)?,
            Scheme::Fixed => match &self.fixed_beta {
                Some(b) => b.clone(),
                None => {
                    let b = update_beta(&mode.mode, self.x, &f_t)?;
                    self.fixed_beta = Some(b.clone());
                    b
                }
            },
        };
        let xb_next = linear_predictor(self.x, &beta)?;
        let resid: Vec<f64> = mode.mode.iter().zip(&xb_next).map(|(w, m)| w - m).collect();
        let (lo, hi) = self.config.bounds_for(&self.grid);
        let eta = update_eta(
            &resid,
            Some(&probes),
            &self.grid,
            AlphaSearch::Bounded { lo, hi },
            Some(&self.theta.eta),
        )?;
        self.diagnostics.alpha_at_bound += usize::from(eta.alpha_at_bound);
        self.diagnostics.infeasible_eta_candidates += eta.infeasible;

        let mut proposal = Theta { beta, eta: eta.eta };
        let mut q_after = q_tilde(&proposal, &mode.mode, self.x, Some(&probes), &self.grid)?;
        let reverted = !(q_after >= q_before);
        if reverted {
            // Only reachable through rounding once the M-step has stalled
            // (or with the fixed scheme's frozen β); keep θ_t.
            proposal = self.theta.clone();
            q_after = q_before;
            self.diagnostics.mstep_reverted += 1;
        }
        debug_assert!(q_after >= q_before);

        let change = proposal.rms_change(&self.theta);
        if !change.is_finite() {
            return Err(SlemError::Numerical(format!("non-finite parameter update at iteration {t}")));
        }
        let theta_before = std::mem::replace(&mut self.theta, proposal);
        self.w = mode.mode.clone();
        self.iteration += 1;
        Ok(StepOutcome {
            iteration: t,
            theta_before,
            theta_after: self.theta.clone(),
            mode,
            probes,
            q_before,
            q_after,
            reverted,
            change,
        })
    }

    /// Iterates until the RMS parameter change drops below `eps_em` or `max_em`
    /// iterations have run. Returns the trace and whether it converged.
    pub fn run(&mut self) -> Result<(Vec<IterationRecord>, bool)> {
        let mut trace = Vec::new();
        while self.iteration < self.config.max_em {
            let out = self.step()?;
            trace.push(IterationRecord::from(&out));
            if out.change < self.config.eps_em {
                return Ok((trace, true));
            }
        }
        Ok((trace, false))
    }

    /// Mode of `W` at the current parameters.
    pub fn final_mode(&mut self) -> Result<LaplaceFit> {
        let f = quasi_matern_spectrum(&self.theta.eta, &self.grid)?;
        let xb = linear_predictor(self.x, &self.theta.beta)?;
        let mode = newton_mode(&self.y, &self.delta, &xb, &f, &self.w, &self.config.newton_options())?;
        self.diagnostics.absorb_mode(&mode);
        Ok(mode)
    }
}

/// Summary of the predictor-free warm-start run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub eta: CovParams,
    pub em_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_star: Theta,
    pub w_star: Vec<f64>,
    pub z_star: Vec<f64>,
    pub em_iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<IterationRecord>,
    pub warm_start: WarmStart,
    pub diagnostics: Diagnostics,
}

/// Smallest starting variance when the counts are all zero.
const MIN_START_SIGMA2: f64 = 1e-3;

/// Fits the model to counts `y` with design matrix `x` (`n x (p+1)`, intercept
/// column included by the caller).
///
/// A predictor-free run started at `η = (Ȳ, n1/4)` supplies the starting `η`;
/// the main run then starts from `β = 0`.
pub fn fit(y: &CountGrid, x: &DMatrix<f64>, grid: &GridSpec, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    y.check_grid(grid)?;
    check_len("design rows", grid.len(), x.nrows())?;
    let (lo, hi) = config.bounds_for(grid);

    let delta = grid.delta();
    let w0: Vec<f64> = y
        .values()
        .iter()
        .zip(&delta)
        .map(|(&c, d)| ((c as f64 + 0.5) / d).ln())
        .collect();

    let empty = DMatrix::zeros(grid.len(), 0);
    let eta0 = CovParams::new(
        y.mean().max(MIN_START_SIGMA2),
        (grid.n1() as f64 / 4.0).clamp(lo, hi),
    )?;
    let warm_config = FitConfig {
        scheme: Scheme::Joint,
        ..config.clone()
    };
    let mut warm = EmState::new(y, &empty, grid, &warm_config, Theta { beta: vec![], eta: eta0 }, w0)?
        .with_probe_seed(config.seed.wrapping_add(1 << 32));
    let (warm_trace, warm_converged) = warm.run()?;
    let warm_mode = warm.final_mode()?;
    let warm_start = WarmStart {
        eta: warm.theta().eta,
        em_iterations: warm_trace.len(),
        converged: warm_converged,
    };

    let theta0 = Theta {
        beta: vec![0.0; x.ncols()],
        eta: warm_start.eta,
    };
    let mut em = EmState::new(y, x, grid, config, theta0, warm_mode.mode)?;
    let (objective_trace, converged) = em.run()?;
    let final_mode = em.final_mode()?;
    let theta_star = em.theta().clone();
    let xb = linear_predictor(x, &theta_star.beta)?;
    let z_star = final_mode.mode.iter().zip(&xb).map(|(w, m)| w - m).collect();

    let mut diagnostics = em.diagnostics().clone();
    let wd = warm.diagnostics();
    diagnostics.newton_clamp_events += wd.newton_clamp_events;
    diagnostics.newton_unconverged += wd.newton_unconverged;
    diagnostics.pcg_unconverged += wd.pcg_unconverged;

    Ok(FitResult {
        theta_star,
        w_star: final_mode.mode,
        z_star,
        em_iterations: objective_trace.len(),
        converged,
        objective_trace,
        warm_start,
        diagnostics,
    })
}

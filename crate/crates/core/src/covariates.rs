//! Temporal proxy covariates from a minute-resolution raster stack.
//!
//! The stack is cut into consecutive 10-minute blocks. Each block yields a
//! difference raster (last frame minus first) and an average raster; a
//! pixelwise reduction over blocks then gives one candidate covariate.

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::em::dependent_columns;
use crate::error::{check_len, Result, SlemError};
use crate::grid::{CountGrid, GridSpec};
use crate::raster::Raster;

pub const BLOCK_LEN: usize = 10;

/// Brightness frames, one per minute. `NaN` marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteStack {
    n1: usize,
    n2: usize,
    frames: Vec<Vec<f64>>,
}

impl MinuteStack {
    pub fn new(n1: usize, n2: usize, frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.is_empty() || frames.len() % BLOCK_LEN != 0 {
            return Err(SlemError::InvalidInput(format!(
                "stack has {} frames; need a positive multiple of {BLOCK_LEN}",
                frames.len()
            )));
        }
        for (t, f) in frames.iter().enumerate() {
            check_len("frame values", n1 * n2, f.len())?;
            if let Some(v) = f.iter().find(|v| v.is_infinite()) {
                return Err(SlemError::InvalidInput(format!("frame {} holds {v}", t + 1)));
            }
        }
        Ok(MinuteStack { n1, n2, frames })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn blocks(&self) -> usize {
        self.frames.len() / BLOCK_LEN
    }
}

/// Per-block summaries of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummaries {
    pub diffs: Vec<Raster>,
    pub avgs: Vec<Raster>,
}

/// Differences and averages over frames `10(k−1)+1 ..= 10k` for each block `k`.
pub fn block_summaries(stack: &MinuteStack) -> Result<BlockSummaries> {
    let n = stack.n1 * stack.n2;
    let mut diffs = Vec::with_capacity(stack.blocks());
    let mut avgs = Vec::with_capacity(stack.blocks());
    for block in stack.frames.chunks(BLOCK_LEN) {
        let first = &block[0];
        let last = &block[BLOCK_LEN - 1];
        let diff: Vec<f64> = (0..n).map(|i| last[i] - first[i]).collect();
        let avg: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = 0.0;
                for f in block {
                    if f[i].is_nan() {
                        return f64::NAN;
                    }
                    s += f[i];
                }
                s / BLOCK_LEN as f64
            })
            .collect();
        // A pixel missing anywhere in the block is missing in both summaries.
        let diff = diff
            .into_iter()
            .zip(&avg)
            .map(|(d, a)| if a.is_nan() { f64::NAN } else { d })
            .collect();
        diffs.push(Raster::new(stack.n1, stack.n2, diff)?);
        avgs.push(Raster::new(stack.n1, stack.n2, avg)?);
    }
    Ok(BlockSummaries { diffs, avgs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryFn {
    Avg,
    Min,
    Max,
    Range,
}

impl SummaryFn {
    pub const ALL: [SummaryFn; 4] = [SummaryFn::Avg, SummaryFn::Min, SummaryFn::Max, SummaryFn::Range];

    pub fn name(self) -> &'static str {
        match self {
            SummaryFn::Avg => "avg",
            SummaryFn::Min => "min",
            SummaryFn::Max => "max",
            SummaryFn::Range => "range",
        }
    }
}

/// Pixelwise reduction across block rasters.
pub fn summarize_blocks(blocks: &[Raster], func: SummaryFn) -> Result<Raster> {
    let first = blocks
        .first()
        .ok_or_else(|| SlemError::InvalidInput("no blocks to summarise".into()))?;
    let (n1, n2) = (first.n1(), first.n2());
    for b in blocks {
        check_len("block raster", n1 * n2, b.values().len())?;
    }
    let values = (0..n1 * n2)
        .map(|i| {
            let vals: Vec<f64> = blocks.iter().map(|b| b.values()[i]).collect();
            if vals.iter().any(|v| v.is_nan()) {
                return f64::NAN;
            }
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            match func {
                SummaryFn::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
                SummaryFn::Min => min,
                SummaryFn::Max => max,
                SummaryFn::Range => max - min,
            }
        })
        .collect();
    Raster::new(n1, n2, values)
}

/// Missing entries replaced by the mean of the present ones.
fn mean_impute(values: &[f64]) -> (Vec<f64>, usize) {
    let present: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let missing = values.len() - present.len();
    (values.iter().map(|&v| if v.is_nan() { mean } else { v }).collect(), missing)
}

/// Fitted single-covariate Poisson regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonFit {
    pub intercept: f64,
    pub slope: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
}

const IRLS_MAX_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-8;
const IRLS_RIDGE: f64 = 1e-8;

fn poisson_loglik(y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&yi, &m)| {
            let lf = ln_gamma(yi + 1.0);
            if yi == 0.0 {
                -m - lf
            } else {
                yi * m.ln() - m - lf
            }
        })
        .sum()
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&yi, &m)| if yi > 0.0 { yi * (yi / m).ln() - (yi - m) } else { m })
        .sum::<f64>()
}

/// Fits `log E[Y_i] = log Δ_i + a + b x_i` by iteratively reweighted least squares.
///
/// Returns `None` if the iteration produces non-finite values.
pub fn poisson_regression(y: &[f64], delta: &[f64], x: &[f64]) -> Result<Option<PoissonFit>> {
    let n = y.len();
    check_len("delta", n, delta.len())?;
    check_len("covariate", n, x.len())?;
    let total: f64 = y.iter().sum();
    let exposure: f64 = delta.iter().sum();
    let mut coef = Vector2::new((total.max(0.5) / exposure).ln(), 0.0);
    let mu_of = |c: &Vector2<f64>| -> Vec<f64> {
        (0..n).map(|i| delta[i] * (c[0] + c[1] * x[i]).exp()).collect()
    };
    let mut mu = mu_of(&coef);
    let mut dev = deviance(y, &mu);
    let mut iterations = 0;
    for it in 1..=IRLS_MAX_ITER {
        iterations = it;
        let mut a = Matrix2::from_diagonal_element(IRLS_RIDGE);
        let mut b = Vector2::zeros();
        for i in 0..n {
            let eta = coef[0] + coef[1] * x[i];
            let z = eta + (y[i] - mu[i]) / mu[i];
            let w = mu[i];
            a[(0, 0)] += w;
            a[(0, 1)] += w * x[i];
            a[(1, 1)] += w * x[i] * x[i];
            b[0] += w * z;
            b[1] += w * z * x[i];
        }
        a[(1, 0)] = a[(0, 1)];
        let Some(next) = a.cholesky().map(|c| c.solve(&b)) else {
            return Ok(None);
        };
        if !(next[0].is_finite() && next[1].is_finite()) {
            return Ok(None);
        }
        coef = next;
        mu = mu_of(&coef);
        if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Ok(None);
        }
        let new_dev = deviance(y, &mu);
        let done = (dev - new_dev).abs() <= IRLS_TOL * new_dev.abs().max(IRLS_TOL);
        dev = new_dev;
        if done {
            break;
        }
    }
    let ll = poisson_loglik(y, &mu);
    if !ll.is_finite() {
        return Ok(None);
    }
    Ok(Some(PoissonFit {
        intercept: coef[0],
        slope: coef[1],
        log_likelihood: ll,
        iterations,
    }))
}

/// Result of choosing among candidate covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    /// One entry per candidate; `-inf` where the regression failed.
    pub log_likelihoods: Vec<f64>,
}

/// Picks the candidate whose single-covariate Poisson regression has the
/// highest log-likelihood. Ties go to the earlier candidate; missing values
/// are mean-imputed.
pub fn select_summary(y: &CountGrid, delta: &[f64], candidates: &[Raster]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(SlemError::InvalidInput("no candidate covariates".into()));
    }
    let yf = y.as_f64();
    let mut lls = Vec::with_capacity(candidates.len());
    for c in candidates {
        check_len("candidate covariate", yf.len(), c.values().len())?;
        let (x, _) = mean_impute(c.values());
        let ll = poisson_regression(&yf, delta, &x)?.map_or(f64::NEG_INFINITY, |f| f.log_likelihood);
        lls.push(ll);
    }
    let mut index = 0;
    for (i, &ll) in lls.iter().enumerate() {
        if ll > lls[index] {
            index = i;
        }
    }
    Ok(Selection {
        index,
        log_likelihoods: lls,
    })
}

/// Design matrix with an intercept column followed by standardised covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    pub x: DMatrix<f64>,
    /// Missing pixels filled per covariate column (excluding the intercept).
    pub imputed: Vec<usize>,
}

impl CovariateMatrix {
    /// Number of covariates `p` (the matrix has `p + 1` columns).
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Intercept-only design on `grid`.
    pub fn intercept_only(grid: &GridSpec) -> Self {
        CovariateMatrix {
            x: DMatrix::from_element(grid.len(), 1, 1.0),
            imputed: Vec::new(),
        }
    }

    /// Uses `columns` as they are, after an intercept, with no standardisation.
    pub fn raw(grid: &GridSpec, columns: &[Raster]) -> Result<Self> {
        let n = grid.len();
        let mut x = DMatrix::from_element(n, columns.len() + 1, 1.0);
        for (j, c) in columns.iter().enumerate() {
            c.check_grid(grid)?;
            if c.missing_count() > 0 {
                return Err(SlemError::InvalidInput(format!("covariate {} has missing values", j + 1)));
            }
            x.column_mut(j + 1).copy_from_slice(c.values());
        }
        check_rank(&x)?;
        Ok(CovariateMatrix {
            x,
            imputed: vec![0; columns.len()],
        })
    }
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let gram = x.transpose() * x;
    match dependent_columns(&gram) {
        Some(columns) => Err(SlemError::SingularDesign { columns }),
        None => Ok(()),
    }
}

/// Centres each raster and scales it to unit sample standard deviation, then
/// prepends an intercept. Missing pixels are mean-imputed (so they end up at 0).
pub fn standardize(columns: &[Raster], grid: &GridSpec) -> Result<CovariateMatrix> {
    let n = grid.len();
    if n < 2 {
        return Err(SlemError::InvalidInput("standardisation needs at least two pixels".into()));
    }
    let mut x = DMatrix::from_element(n, columns.len() + 1, 1.0);
    let mut imputed = Vec::with_capacity(columns.len());
    for (j, c) in columns.iter().enumerate() {
        c.check_grid(grid)?;
        let (vals, missing) = mean_impute(c.values());
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(SlemError::InvalidInput(format!("covariate {} has zero variance", j + 1)));
        }
        for (i, v) in vals.iter().enumerate() {
            x[(i, j + 1)] = (v - mean) / sd;
        }
        imputed.push(missing);
    }
    check_rank(&x)?;
    Ok(CovariateMatrix { x, imputed })
}

//! File-to-file commands behind the `slem` binary.
//!
//! Every command reads one JSON config (unknown keys are rejected), resolves
//! relative paths against the config's directory and writes its outputs into
//! an output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{
    block_summaries, select_summary, standardize, summarize_blocks, CovariateMatrix, SummaryFn,
};
use crate::em::{fit, FitConfig, FitResult, Theta, WarmStart};
use crate::error::{Result, SlemError};
use crate::eval::{log_score, rmse_log_intensity, IntensityKind, ScoreReport, DEFAULT_MARGIN};
use crate::grid::{bin_points, split_train_test, GridSpec, PointPattern};
use crate::io;
use crate::posterior::{intensity_mean, local_variance, psi_diagonal, DEFAULT_K};
use crate::raster::Raster;
use crate::simulation::{calibrate_to_matern, Calibration, CovariateSource, SimScenario};
use crate::spectral::{quasi_matern_spectrum, CovParams};

/// Command-line overrides shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub sqrt_display: bool,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn raster_on(grid: &GridSpec, values: Vec<f64>) -> Result<Raster> {
    Raster::on_grid(grid, values)
}

fn load_design(grid: &GridSpec, base: &Path, paths: &[PathBuf], standardized: bool) -> Result<CovariateMatrix> {
    if paths.is_empty() {
        return Ok(CovariateMatrix::intercept_only(grid));
    }
    let cols = paths
        .iter()
        .map(|p| {
            let r = io::read_raster(resolve(base, p))?;
            r.check_grid(grid)?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    if standardized {
        standardize(&cols, grid)
    } else {
        CovariateMatrix::raw(grid, &cols)
    }
}

fn default_true() -> bool {
    true
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_train_fraction() -> f64 {
    0.9
}

fn default_margin() -> usize {
    DEFAULT_MARGIN
}

fn default_time_window() -> f64 {
    1.0
}

// ---------------------------------------------------------------- grid

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub grid: GridSpec,
    pub points: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSummary {
    pub in_domain: usize,
    pub out_of_domain: usize,
    pub runtime_seconds: f64,
}

/// Bins a point CSV into `counts.csv`.
pub fn cmd_grid(cfg: &GridConfig, base: &Path, opts: &RunOptions) -> Result<BinningSummary> {
    let start = Instant::now();
    let pattern = io::read_points(resolve(base, &cfg.points))?;
    let binned = bin_points(&pattern, &cfg.grid);
    io::write_counts(opts.out_dir.join("counts.csv"), &binned.counts)?;
    let summary = BinningSummary {
        in_domain: binned.in_domain,
        out_of_domain: binned.out_of_domain,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    io::write_json(opts.out_dir.join("binning.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- simulate

/// Target Matérn (smoothness 1) field that the simulated quasi-Matérn field imitates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternMatch {
    pub variance: f64,
    pub range: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub eta_true: Option<CovParams>,
    #[serde(default)]
    pub matern_match: Option<MaternMatch>,
    pub beta_true: Vec<f64>,
    /// Covariate rasters; standard normal rasters are drawn when empty.
    #[serde(default)]
    pub covariate_files: Vec<PathBuf>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub grid: GridSpec,
    pub eta_true: CovParams,
    pub calibration: Option<Calibration>,
    pub beta_true: Vec<f64>,
    pub covariate_source: String,
    pub replicates: usize,
    pub seed: u64,
    pub counts: Vec<String>,
    pub covariates: Vec<String>,
    pub z_true: String,
    pub log_lambda_true: String,
    pub total_counts: Vec<u64>,
    pub runtime_seconds: f64,
}

/// Writes `Y_000.csv`, ..., `X_1.csv`, ..., `Z_true.csv`, `log_lambda_true.csv`
/// and `manifest.json`.
pub fn cmd_simulate(cfg: &SimulateConfig, base: &Path, opts: &RunOptions) -> Result<SimulationManifest> {
    let start = Instant::now();
    let seed = opts.seed.unwrap_or(cfg.seed);
    let (eta_true, calibration) = match (cfg.eta_true, cfg.matern_match) {
        (Some(eta), None) => (eta, None),
        (None, Some(m)) => {
            let c = calibrate_to_matern(&cfg.grid, m.variance, m.range)?;
            (c.eta, Some(c))
        }
        _ => {
            return Err(SlemError::Config(
                "give exactly one of eta_true and matern_match".into(),
            ))
        }
    };
    let source = if cfg.covariate_files.is_empty() {
        CovariateSource::StandardNormal
    } else {
        let cols = cfg
            .covariate_files
            .iter()
            .map(|p| io::read_raster(resolve(base, p)))
            .collect::<Result<Vec<_>>>()?;
        CovariateSource::Supplied(cols)
    };
    let scenario = SimScenario {
        grid: cfg.grid,
        eta_true,
        beta_true: cfg.beta_true.clone(),
        covariate_source: source,
        replicates: cfg.replicates,
        seed,
    };
    let truth = scenario.truth()?;
    let out = &opts.out_dir;

    let counts: Vec<(String, u64)> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            let y = scenario.sample_counts(&truth, r)?;
            let name = format!("Y_{r:03}.csv");
            io::write_counts(out.join(&name), &y)?;
            Ok((name, y.total()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut covariates = Vec::new();
    for (j, c) in truth.covariates.iter().enumerate() {
        let name = format!("X_{}.csv", j + 1);
        io::write_raster(out.join(&name), c)?;
        covariates.push(name);
    }
    io::write_raster(out.join("Z_true.csv"), &raster_on(&cfg.grid, truth.z_true.clone())?)?;
    io::write_raster(
        out.join("log_lambda_true.csv"),
        &raster_on(&cfg.grid, truth.log_lambda_true.clone())?,
    )?;

    let manifest = SimulationManifest {
        grid: cfg.grid,
        eta_true,
        calibration,
        beta_true: cfg.beta_true.clone(),
        covariate_source: match scenario.covariate_source {
            CovariateSource::StandardNormal => "standard_normal".into(),
            CovariateSource::Supplied(_) => "supplied".into(),
        },
        replicates: scenario.replicates,
        seed,
        counts: counts.iter().map(|c| c.0.clone()).collect(),
        covariates,
        z_true: "Z_true.csv".into(),
        log_lambda_true: "log_lambda_true.csv".into(),
        total_counts: counts.iter().map(|c| c.1).collect(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    io::write_json(out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCommandConfig {
    pub grid: GridSpec,
    pub counts: PathBuf,
    #[serde(default)]
    pub covariates: Vec<PathBuf>,
    /// Centre and scale the covariates before fitting.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub theta: Theta,
    pub converged: bool,
    pub em_iterations: usize,
    pub warm_start: WarmStart,
    pub config: FitConfig,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    #[serde(flatten)]
    pub counters: crate::em::Diagnostics,
    pub imputed_covariate_pixels: Vec<usize>,
}

fn write_fit_outputs(out: &Path, grid: &GridSpec, res: &FitResult, summary: &FitSummary, imputed: &[usize]) -> Result<()> {
    io::write_json(out.join("theta.json"), summary)?;
    io::write_raster(out.join("W_star.csv"), &raster_on(grid, res.w_star.clone())?)?;
    io::write_raster(out.join("Z_star.csv"), &raster_on(grid, res.z_star.clone())?)?;
    io::write_json(
        out.join("diagnostics.json"),
        &FitDiagnostics {
            counters: res.diagnostics.clone(),
            imputed_covariate_pixels: imputed.to_vec(),
        },
    )?;
    let p1 = res.theta_star.beta.len();
    let mut header: Vec<String> = ["iteration", "q_before", "q_after", "change", "newton_iterations", "sigma2", "alpha"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..p1).map(|j| format!("beta_{j}")));
    let rows: Vec<Vec<f64>> = res
        .objective_trace
        .iter()
        .map(|r| {
            let mut row = vec![
                r.iteration as f64,
                r.q_before,
                r.q_after,
                r.change,
                r.newton_iterations as f64,
                r.theta.eta.sigma2,
                r.theta.eta.alpha,
            ];
            row.extend(&r.theta.beta);
            row
        })
        .collect();
    io::write_table(out.join("objective_trace.csv"), &header, &rows)
}

/// Fits the model and writes `theta.json`, `W_star.csv`, `Z_star.csv`,
/// `diagnostics.json` and `objective_trace.csv`.
pub fn cmd_fit(cfg: &FitCommandConfig, base: &Path, opts: &RunOptions) -> Result<FitSummary> {
    let start = Instant::now();
    let mut fit_cfg = cfg.fit.clone();
    if let Some(s) = opts.seed {
        fit_cfg.seed = s;
    }
    fit_cfg.validate()?;
    let y = io::read_counts(resolve(base, &cfg.counts))?;
    y.check_grid(&cfg.grid)?;
    let design = load_design(&cfg.grid, base, &cfg.covariates, cfg.standardize)?;
    let res = fit(&y, &design.x, &cfg.grid, &fit_cfg)?;
    let summary = FitSummary {
        theta: res.theta_star.clone(),
        converged: res.converged,
        em_iterations: res.em_iterations,
        warm_start: res.warm_start.clone(),
        config: fit_cfg,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    write_fit_outputs(&opts.out_dir, &cfg.grid, &res, &summary, &design.imputed)?;
    Ok(summary)
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub grid: GridSpec,
    /// Directory holding the outputs of `fit`.
    pub fit_dir: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Length of the observation period; intensities are divided by it.
    #[serde(default = "default_time_window")]
    pub time_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub k: usize,
    pub time_window: f64,
    pub sqrt_display: bool,
    pub runtime_seconds: f64,
}

/// Writes `local_var.csv`, `latent_mean.csv` and `intensity.csv` (and their
/// square roots under `--sqrt-display`).
pub fn cmd_predict(cfg: &PredictConfig, base: &Path, opts: &RunOptions) -> Result<PredictSummary> {
    let start = Instant::now();
    if !(cfg.time_window > 0.0 && cfg.time_window.is_finite()) {
        return Err(SlemError::Config(format!("time_window must be positive, got {}", cfg.time_window)));
    }
    let dir = resolve(base, &cfg.fit_dir);
    let summary: FitSummary = io::read_json(dir.join("theta.json"))?;
    let w = io::read_raster(dir.join("W_star.csv"))?;
    let z = io::read_raster(dir.join("Z_star.csv"))?;
    w.check_grid(&cfg.grid)?;
    z.check_grid(&cfg.grid)?;
    let delta = cfg.grid.delta();
    let f = quasi_matern_spectrum(&summary.theta.eta, &cfg.grid)?;
    let psi = psi_diagonal(w.values(), &delta)?;
    let var = local_variance(&f, &psi, cfg.k)?;
    let xb: Vec<f64> = w.values().iter().zip(z.values()).map(|(a, b)| a - b).collect();
    let est = intensity_mean(z.values(), &var, &xb, &delta)?;
    let intensity: Vec<f64> = est.intensity.iter().map(|v| v / cfg.time_window).collect();

    let out = &opts.out_dir;
    for (name, values) in [
        ("local_var", &est.local_var),
        ("latent_mean", &est.latent_mean),
        ("intensity", &intensity),
    ] {
        let r = raster_on(&cfg.grid, values.clone())?;
        io::write_raster(out.join(format!("{name}.csv")), &r)?;
        if opts.sqrt_display {
            io::write_raster(out.join(format!("{name}_sqrt.csv")), &r.map(f64::sqrt))?;
        }
    }
    let s = PredictSummary {
        k: cfg.k,
        time_window: cfg.time_window,
        sqrt_display: opts.sqrt_display,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    io::write_json(out.join("predict.json"), &s)?;
    Ok(s)
}

// ---------------------------------------------------------------- score

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub grid: GridSpec,
    /// Point CSV; alternatively `counts`, expanded to points at pixel centroids.
    #[serde(default)]
    pub points: Option<PathBuf>,
    #[serde(default)]
    pub counts: Option<PathBuf>,
    #[serde(default)]
    pub covariates: Vec<PathBuf>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Multiplier of the training intensity; `(1 − f)/f` when absent.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub intensity: IntensityKind,
    /// True log-intensity raster for the RMSE columns.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default = "default_margin")]
    pub margin: usize,
    #[serde(default)]
    pub split_seed: u64,
}

/// Splits the points, refits on the training part and scores the held-out part.
/// Writes `score.json`.
pub fn cmd_score(cfg: &ScoreConfig, base: &Path, opts: &RunOptions) -> Result<ScoreReport> {
    let start = Instant::now();
    let grid = &cfg.grid;
    let pattern = match (&cfg.points, &cfg.counts) {
        (Some(p), None) => io::read_points(resolve(base, p))?,
        (None, Some(c)) => PointPattern::from_counts(&io::read_counts(resolve(base, c))?, grid)?,
        _ => return Err(SlemError::Config("give exactly one of points and counts".into())),
    };
    let split_seed = opts.seed.unwrap_or(cfg.split_seed);
    let mut fit_cfg = cfg.fit.clone();
    if let Some(s) = opts.seed {
        fit_cfg.seed = s;
    }
    let (train, test) = split_train_test(&pattern, cfg.train_fraction, split_seed)?;
    let y_train = bin_points(&train, grid).counts;
    let y_test = bin_points(&test, grid).counts;
    let scale = cfg.scale.unwrap_or((1.0 - cfg.train_fraction) / cfg.train_fraction);

    let design = load_design(grid, base, &cfg.covariates, cfg.standardize)?;
    let res = fit(&y_train, &design.x, grid, &fit_cfg)?;
    let delta = grid.delta();
    let lambda_hat = match cfg.intensity {
        IntensityKind::Mode => res.w_star.iter().map(|w| w.exp()).collect(),
        IntensityKind::PosteriorMean => {
            let f = quasi_matern_spectrum(&res.theta_star.eta, grid)?;
            let psi = psi_diagonal(&res.w_star, &delta)?;
            let var = local_variance(&f, &psi, cfg.k)?;
            let xb: Vec<f64> = res.w_star.iter().zip(&res.z_star).map(|(a, b)| a - b).collect();
            intensity_mean(&res.z_star, &var, &xb, &delta)?.intensity
        }
    };
    let score = log_score(&y_test, &lambda_hat, &delta, scale)?;

    let (rmse_full, rmse_interior) = match &cfg.truth {
        None => (None, None),
        Some(t) => {
            let truth = io::read_raster(resolve(base, t))?;
            truth.check_grid(grid)?;
            // The training fit sees a thinned pattern; undo the thinning on the log scale.
            let shift = (pattern.len() as f64 / train.len() as f64).ln();
            let est: Vec<f64> = res.w_star.iter().map(|w| w + shift).collect();
            let (f, i) = rmse_log_intensity(&est, truth.values(), grid, cfg.margin)?;
            (Some(f), Some(i))
        }
    };
    let report = ScoreReport {
        log_score: score,
        rmse_full,
        rmse_interior,
        runtime_seconds: start.elapsed().as_secs_f64(),
        intensity: cfg.intensity,
        train_points: train.len(),
        test_points: test.len(),
    };
    io::write_json(opts.out_dir.join("score.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- covariates

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariatesConfig {
    pub grid: GridSpec,
    /// Frame directory or long CSV.
    pub stack: PathBuf,
    /// Counts used to pick the summaries; the defaults are used without them.
    #[serde(default)]
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryChoice {
    pub selected: SummaryFn,
    /// Per candidate in the order avg, min, max, range; `None` without counts.
    pub log_likelihoods: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateReport {
    pub frames: usize,
    pub blocks: usize,
    pub diffs: SummaryChoice,
    pub avgs: SummaryChoice,
    pub missing_pixels: usize,
    pub runtime_seconds: f64,
}

/// Writes every block summary (`diff_<fn>.csv`, `avg_<fn>.csv`), the selected
/// pair as `X_1.csv` and `X_2.csv`, and `covariates.json`.
pub fn cmd_covariates(cfg: &CovariatesConfig, base: &Path, opts: &RunOptions) -> Result<CovariateReport> {
    let start = Instant::now();
    let grid = &cfg.grid;
    let stack = io::read_minute_stack(resolve(base, &cfg.stack), grid.n1(), grid.n2())?;
    let blocks = block_summaries(&stack)?;
    let counts = match &cfg.counts {
        Some(c) => {
            let y = io::read_counts(resolve(base, c))?;
            y.check_grid(grid)?;
            Some(y)
        }
        None => None,
    };
    let out = &opts.out_dir;
    let choose = |prefix: &str, set: &[Raster], default: SummaryFn| -> Result<(SummaryChoice, Raster)> {
        let cands = SummaryFn::ALL
            .iter()
            .map(|&f| summarize_blocks(set, f))
            .collect::<Result<Vec<_>>>()?;
        for (f, r) in SummaryFn::ALL.iter().zip(&cands) {
            io::write_raster(out.join(format!("{prefix}_{}.csv", f.name())), r)?;
        }
        let (idx, lls) = match &counts {
            Some(y) => {
                let sel = select_summary(y, &grid.delta(), &cands)?;
                (sel.index, Some(sel.log_likelihoods))
            }
            None => (SummaryFn::ALL.iter().position(|&f| f == default).unwrap_or(0), None),
        };
        Ok((
            SummaryChoice {
                selected: SummaryFn::ALL[idx],
                log_likelihoods: lls,
            },
            cands[idx].clone(),
        ))
    };
    let (diffs, x1) = choose("diff", &blocks.diffs, SummaryFn::Avg)?;
    let (avgs, x2) = choose("avg", &blocks.avgs, SummaryFn::Min)?;
    io::write_raster(out.join("X_1.csv"), &x1)?;
    io::write_raster(out.join("X_2.csv"), &x2)?;
    let report = CovariateReport {
        frames: stack.frames().len(),
        blocks: stack.blocks(),
        diffs,
        avgs,
        missing_pixels: x1.missing_count().max(x2.missing_count()),
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    io::write_json(out.join("covariates.json"), &report)?;
    Ok(report)
}

/// Reads a command config from `path`, returning it with the directory that
/// relative paths inside it are resolved against.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| SlemError::io(path, e))?;
    let cfg = serde_json::from_str(&text).map_err(|e| SlemError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_reject_unknown_keys() {
        let grid = r#"{"n1": 4, "n2": 4, "x_min": 0, "x_max": 4, "y_min": 0, "y_max": 4}"#;
        let ok = format!(r#"{{"grid": {grid}, "counts": "y.csv", "fit": {{"M": 2}}}}"#);
        let cfg: FitCommandConfig = serde_json::from_str(&ok).unwrap();
        assert!(cfg.standardize);
        assert_eq!(cfg.fit.m, 2);
        let bad = format!(r#"{{"grid": {grid}, "counts": "y.csv", "colour": 1}}"#);
        assert!(serde_json::from_str::<FitCommandConfig>(&bad).is_err());
        let bad_fit = format!(r#"{{"grid": {grid}, "counts": "y.csv", "fit": {{"iters": 3}}}}"#);
        assert!(serde_json::from_str::<FitCommandConfig>(&bad_fit).is_err());
    }

    #[test]
    fn grid_command_bins_points() {
        let dir = tempfile::tempdir().unwrap();
        io::write_points(
            dir.path().join("p.csv"),
            &PointPattern::new(vec![(0.5, 0.5), (1.5, 0.5), (9.0, 9.0)]),
        )
        .unwrap();
        let cfg = GridConfig {
            grid: GridSpec::unit(2, 2).unwrap(),
            points: "p.csv".into(),
        };
        let opts = RunOptions {
            out_dir: dir.path().join("out"),
            ..RunOptions::default()
        };
        let s = cmd_grid(&cfg, dir.path(), &opts).unwrap();
        assert_eq!((s.in_domain, s.out_of_domain), (2, 1));
        let c = io::read_counts(dir.path().join("out/counts.csv")).unwrap();
        assert_eq!(c.values(), &[1, 1, 0, 0]);
    }

    #[test]
    fn simulate_needs_exactly_one_covariance() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimulateConfig {
            grid: GridSpec::unit(4, 4).unwrap(),
            eta_true: None,
            matern_match: None,
            beta_true: vec![0.0],
            covariate_files: vec![],
            replicates: 1,
            seed: 0,
        };
        let opts = RunOptions {
            out_dir: dir.path().to_path_buf(),
            ..RunOptions::default()
        };
        assert!(matches!(cmd_simulate(&cfg, dir.path(), &opts), Err(SlemError::Config(_))));
    }
}

//! Monte Carlo coverage experiments over simulated identification data.
//!
//! One trial simulates a dataset, runs all three estimators/bands, and
//! records which coefficients each band contained. The Monte Carlo
//! driver aggregates per-coefficient containment frequencies and mean
//! half-widths over deterministically seeded trials; results are
//! identical across repeat runs and across worker counts.

pub mod io;

use std::path::PathBuf;

use ndarray::Array1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{least_squares, regularized_estimate};
use crate::kernels::{build_kernel, HyperRectangle, Hyperparameters, KernelFamily};
use crate::linsys::{g1, g2, gaussian_input, Dataset, TransferFunction};
use crate::robust::{
    build_hyperposterior, ls_band, robust_band_with_grid, vanilla_band, BandMethod, CredibleSet,
    ErrorBand, HyperGridSpec, Hyperprior, Scaling,
};

/// Stride between per-trial seeds (the 64-bit golden-ratio constant).
pub const TRIAL_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Deterministic seed of trial `index`:
/// `master XOR (index * TRIAL_SEED_STRIDE mod 2^64)`.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    master ^ (index as u64).wrapping_mul(TRIAL_SEED_STRIDE)
}

/// Offset separating the noise stream from the input stream of a trial.
const NOISE_SEED_OFFSET: u64 = 0xD1B5_4A32_D192_ED03;

/// Which system a trial identifies.
#[derive(Debug, Clone)]
pub enum SystemTag {
    G1,
    G2,
    Custom(TransferFunction),
}

impl SystemTag {
    pub fn transfer_function(&self) -> TransferFunction {
        match self {
            SystemTag::G1 => g1(),
            SystemTag::G2 => g2(),
            SystemTag::Custom(tf) => tf.clone(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SystemTag::G1 => "g1",
            SystemTag::G2 => "g2",
            SystemTag::Custom(_) => "custom",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "g1" => Ok(SystemTag::G1),
            "g2" => Ok(SystemTag::G2),
            other => Err(Error::Config(format!(
                "unknown system '{other}' (expected g1 or g2)"
            ))),
        }
    }
}

/// Full description of a coverage experiment. Mirrors the config-file
/// keys one to one; see the README for the file format.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub system: SystemTag,
    pub noise_var: f64,
    pub n_samples: usize,
    pub n_g: usize,
    pub kernel: KernelFamily,
    pub delta: f64,
    pub delta_prime: f64,
    pub scaling: Scaling,
    pub runs: usize,
    pub seed: u64,
    pub grid: HyperGridSpec,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The benchmark protocol: 200 unit-Gaussian input samples, 50
    /// coefficients, TC kernel, 10% confidence parameters, 100 runs.
    fn default() -> Self {
        Self {
            system: SystemTag::G1,
            noise_var: 0.1,
            n_samples: 200,
            n_g: 50,
            kernel: KernelFamily::TunedCorrelated,
            delta: 0.1,
            delta_prime: 0.1,
            scaling: Scaling::Practical,
            runs: 100,
            seed: 1,
            grid: HyperGridSpec::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        // NaN fails the comparison and lands here too.
        let noise_ok = self.noise_var > 0.0;
        if !noise_ok {
            return Err(Error::Config(format!(
                "noise_var must be positive, got {}",
                self.noise_var
            )));
        }
        if self.n_samples == 0 || self.n_g == 0 || self.runs == 0 {
            return Err(Error::Config("counts must be positive".into()));
        }
        if self.n_samples < self.n_g {
            return Err(Error::Config(format!(
                "n_samples {} must be at least n_g {}",
                self.n_samples, self.n_g
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0,1)", self.delta)));
        }
        if !(self.delta_prime > 0.0 && self.delta_prime < 1.0) {
            return Err(Error::Config(format!(
                "delta_prime {} outside (0,1)",
                self.delta_prime
            )));
        }
        self.grid.validate()
    }

    /// Parse a flat `key = value` config file (`#` starts a comment).
    /// Unset keys keep their defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            config.set_key(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Set one field from its config-file key.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
        }
        match key {
            "system" => self.system = SystemTag::from_tag(value)?,
            "noise_var" => self.noise_var = parse(key, value)?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "n_g" => self.n_g = parse(key, value)?,
            "kernel" => self.kernel = KernelFamily::from_tag(value)?,
            "delta" => self.delta = parse(key, value)?,
            "delta_prime" => self.delta_prime = parse(key, value)?,
            "scaling" => self.scaling = Scaling::from_tag(value)?,
            "runs" => self.runs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grid_c_min" => self.grid.scale_min = parse(key, value)?,
            "grid_c_max" => self.grid.scale_max = parse(key, value)?,
            "grid_c_count" => self.grid.scale_count = parse(key, value)?,
            "grid_lambda_min" => self.grid.decay_min = parse(key, value)?,
            "grid_lambda_max" => self.grid.decay_max = parse(key, value)?,
            "grid_lambda_count" => self.grid.decay_count = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Simulate the dataset of one trial: unit-Gaussian inputs from the
    /// trial seed, noise from the offset stream.
    pub fn simulate_trial_data(&self, seed: u64) -> Result<Dataset> {
        let tf = self.system.transfer_function();
        let u = gaussian_input(self.n_samples, seed);
        Dataset::simulate(
            &tf,
            &u,
            self.n_g,
            self.noise_var,
            seed.wrapping_add(NOISE_SEED_OFFSET),
        )
    }
}

/// Band half-widths and per-coefficient containment of one method in
/// one trial.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub half_widths: Array1<f64>,
    pub contained: Vec<bool>,
}

impl MethodOutcome {
    fn new(estimate: &Array1<f64>, truth: &[f64], band: &ErrorBand) -> Self {
        let contained = (0..truth.len())
            .map(|l| band.contains(estimate[l], truth[l], l))
            .collect();
        Self {
            half_widths: band.half_widths().clone(),
            contained,
        }
    }

    pub fn mean_half_width(&self) -> f64 {
        self.half_widths.sum() / self.half_widths.len() as f64
    }
}

/// Everything recorded about a single trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub seed: u64,
    pub eta_hat: Hyperparameters,
    pub credible: CredibleSet,
    pub ls: MethodOutcome,
    pub vanilla: MethodOutcome,
    pub robust: MethodOutcome,
}

impl TrialRecord {
    pub fn outcome(&self, method: BandMethod) -> &MethodOutcome {
        match method {
            BandMethod::LeastSquares => &self.ls,
            BandMethod::Vanilla => &self.vanilla,
            BandMethod::Robust => &self.robust,
        }
    }
}

/// Run one trial: simulate, estimate, band, score containment against
/// the known truncated impulse response.
pub fn run_trial(config: &ExperimentConfig, seed: u64) -> Result<TrialRecord> {
    config.validate()?;
    let tf = config.system.transfer_function();
    let truth = tf.impulse_response(config.n_g);
    let data = config.simulate_trial_data(seed)?;

    let ls_model = least_squares(&data)?;
    let ls_b = ls_band(&ls_model, config.delta)?;

    let grid = build_hyperposterior(&data, config.kernel, &config.grid, &Hyperprior::Flat)?;
    let robust = robust_band_with_grid(&data, &grid, config.delta, config.delta_prime, config.scaling)?;

    let kernel = build_kernel(config.kernel, robust.eta_hat, config.n_g);
    let posterior = regularized_estimate(&data, &kernel)?;
    let vanilla_b = vanilla_band(&posterior, config.delta)?;

    Ok(TrialRecord {
        seed,
        eta_hat: robust.eta_hat,
        credible: robust.credible,
        ls: MethodOutcome::new(ls_model.estimate(), truth.coefficients(), &ls_b),
        vanilla: MethodOutcome::new(posterior.mean(), truth.coefficients(), &vanilla_b),
        robust: MethodOutcome::new(posterior.mean(), truth.coefficients(), &robust.band),
    })
}

/// One line of the per-run table in a coverage report.
#[derive(Debug, Clone)]
pub struct TrialSummary {
    pub run: usize,
    pub seed: u64,
    pub eta_hat: Hyperparameters,
    pub rectangle: HyperRectangle,
    pub rectangle_mass: f64,
    pub mean_width_ls: f64,
    pub mean_width_vanilla: f64,
    pub mean_width_robust: f64,
}

/// Aggregated Monte Carlo results: per-coefficient containment
/// frequencies and mean half-widths per method, plus per-run summaries.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub n_g: usize,
    pub runs: usize,
    pub ls_coverage: Array1<f64>,
    pub vanilla_coverage: Array1<f64>,
    pub robust_coverage: Array1<f64>,
    pub ls_mean_width: Array1<f64>,
    pub vanilla_mean_width: Array1<f64>,
    pub robust_mean_width: Array1<f64>,
    pub trials: Vec<TrialSummary>,
}

impl CoverageReport {
    pub fn coverage(&self, method: BandMethod) -> &Array1<f64> {
        match method {
            BandMethod::LeastSquares => &self.ls_coverage,
            BandMethod::Vanilla => &self.vanilla_coverage,
            BandMethod::Robust => &self.robust_coverage,
        }
    }

    pub fn mean_width(&self, method: BandMethod) -> &Array1<f64> {
        match method {
            BandMethod::LeastSquares => &self.ls_mean_width,
            BandMethod::Vanilla => &self.vanilla_mean_width,
            BandMethod::Robust => &self.robust_mean_width,
        }
    }

    /// Mean half-width over coefficients and runs.
    pub fn overall_mean_width(&self, method: BandMethod) -> f64 {
        let w = self.mean_width(method);
        w.sum() / w.len() as f64
    }

    fn from_records(n_g: usize, records: &[TrialRecord]) -> Self {
        let runs = records.len();
        let mut coverage = [
            Array1::<f64>::zeros(n_g),
            Array1::<f64>::zeros(n_g),
            Array1::<f64>::zeros(n_g),
        ];
        let mut widths = coverage.clone();
        let methods = [
            BandMethod::LeastSquares,
            BandMethod::Vanilla,
            BandMethod::Robust,
        ];
        let mut trials = Vec::with_capacity(runs);
        for (run, record) in records.iter().enumerate() {
            for (m, method) in methods.iter().enumerate() {
                let outcome = record.outcome(*method);
                for l in 0..n_g {
                    if outcome.contained[l] {
                        coverage[m][l] += 1.0;
                    }
                    widths[m][l] += outcome.half_widths[l];
                }
            }
            trials.push(TrialSummary {
                run,
                seed: record.seed,
                eta_hat: record.eta_hat,
                rectangle: record.credible.rectangle(),
                rectangle_mass: record.credible.mass(),
                mean_width_ls: record.ls.mean_half_width(),
                mean_width_vanilla: record.vanilla.mean_half_width(),
                mean_width_robust: record.robust.mean_half_width(),
            });
        }
        let scale = 1.0 / runs as f64;
        for m in 0..3 {
            coverage[m].mapv_inplace(|v| v * scale);
            widths[m].mapv_inplace(|v| v * scale);
        }
        let [lc, vc, rc] = coverage;
        let [lw, vw, rw] = widths;
        Self {
            n_g,
            runs,
            ls_coverage: lc,
            vanilla_coverage: vc,
            robust_coverage: rc,
            ls_mean_width: lw,
            vanilla_mean_width: vw,
            robust_mean_width: rw,
            trials,
        }
    }
}

/// Run the configured number of trials with seeds derived from the
/// master seed and aggregate them.
///
/// Trials execute in the current thread pool; aggregation follows trial
/// order, so the report does not depend on scheduling. A failing trial
/// aborts the run with its index and seed.
pub fn run_montecarlo(config: &ExperimentConfig) -> Result<CoverageReport> {
    config.validate()?;
    let records: Vec<TrialRecord> = (0..config.runs)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(config.seed, i);
            run_trial(config, seed).map_err(|e| Error::TrialFailed {
                index: i,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CoverageReport::from_records(config.n_g, &records))
}

/// Normalized hyperparameter density over the grid for one simulated
/// dataset, as `(scale, decay, density)` rows in scale-major order.
#[derive(Debug, Clone)]
pub struct DensityMap {
    pub rows: Vec<(f64, f64, f64)>,
    pub n_scale: usize,
    pub n_decay: usize,
}

pub fn density_map(config: &ExperimentConfig, seed: u64) -> Result<DensityMap> {
    config.validate()?;
    let data = config.simulate_trial_data(seed)?;
    let grid = build_hyperposterior(&data, config.kernel, &config.grid, &Hyperprior::Flat)?;
    let mut rows = Vec::with_capacity(grid.n_scale() * grid.n_decay());
    for i in 0..grid.n_scale() {
        for j in 0..grid.n_decay() {
            rows.push((
                grid.scale_points()[i],
                grid.decay_points()[j],
                grid.weights()[[i, j]],
            ));
        }
    }
    Ok(DensityMap {
        rows,
        n_scale: grid.n_scale(),
        n_decay: grid.n_decay(),
    })
}

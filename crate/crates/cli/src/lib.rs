//! Command-line front end: resolves a config from defaults, an optional
//! config file, and flag overrides, then dispatches to the library.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use gpfir::estimation::{least_squares, regularized_estimate};
use gpfir::experiments::{self, io, ExperimentConfig, SystemTag};
use gpfir::kernels::build_kernel;
use gpfir::robust::{
    build_hyperposterior, ls_band, robust_band_with_grid, vanilla_band, BandMethod, Hyperprior,
    Scaling,
};
use gpfir::KernelFamily;

#[derive(Parser)]
#[command(
    name = "gpfir",
    version,
    about = "Kernel-based FIR identification with robust error bands",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Each maps to one config-file key;
/// a flag set here wins over the file value.
#[derive(Args, Debug, Default)]
struct CommonOpts {
    /// Config file with `key = value` lines (see the README for keys)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Test system: g1 or g2
    #[arg(long)]
    system: Option<String>,
    /// Measurement noise variance
    #[arg(long)]
    noise_var: Option<f64>,
    /// Number of input/output samples per trial
    #[arg(long)]
    n_samples: Option<usize>,
    /// Number of impulse-response coefficients
    #[arg(long)]
    n_g: Option<usize>,
    /// Kernel family: di, tc, or ss
    #[arg(long)]
    kernel: Option<String>,
    /// Band confidence parameter in (0, 1)
    #[arg(long)]
    delta: Option<f64>,
    /// Hyperparameter-set confidence parameter in (0, 1)
    #[arg(long)]
    delta_prime: Option<f64>,
    /// Robust band scaling: practical or theoretical
    #[arg(long)]
    scaling: Option<String>,
    /// Number of Monte Carlo runs
    #[arg(long)]
    runs: Option<usize>,
    /// Master seed; trial i uses seed XOR (i * 0x9E3779B97F4A7C15)
    #[arg(long)]
    seed: Option<u64>,
    /// Smallest kernel scale on the grid
    #[arg(long)]
    grid_c_min: Option<f64>,
    /// Largest kernel scale on the grid
    #[arg(long)]
    grid_c_max: Option<f64>,
    /// Number of log-spaced scale grid points
    #[arg(long)]
    grid_c_count: Option<usize>,
    /// Smallest kernel decay on the grid
    #[arg(long)]
    grid_lambda_min: Option<f64>,
    /// Largest kernel decay on the grid
    #[arg(long)]
    grid_lambda_max: Option<f64>,
    /// Number of linear decay grid points
    #[arg(long)]
    grid_lambda_count: Option<usize>,
    /// Output directory for CSV tables
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset and write dataset.csv
    Simulate(CommonOpts),
    /// Identify one dataset; writes estimate.csv, covariance.csv, eta.csv
    Identify(CommonOpts),
    /// Error band for one dataset; writes bands.csv
    Bound {
        #[command(flatten)]
        common: CommonOpts,
        /// Band method: ls, vanilla, or robust
        #[arg(long, default_value = "robust")]
        method: String,
    },
    /// Monte Carlo coverage experiment; writes coverage.csv, widths.csv,
    /// runs.csv
    Montecarlo {
        #[command(flatten)]
        common: CommonOpts,
        /// Worker threads for parallel trials (0 = automatic)
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Hyperparameter density table for one dataset; writes density.csv
    Density(CommonOpts),
}

const EXIT_OK: i32 = 0;
const EXIT_RUNTIME: i32 = 1;
const EXIT_USAGE: i32 = 2;

/// Parse arguments, run the requested subcommand, and return the exit
/// code: 0 on success, 2 for usage/config problems, 1 for runtime
/// failures.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<gpfir::Error> for CliError {
    fn from(e: gpfir::Error) -> Self {
        match e {
            gpfir::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn resolve_config(opts: &CommonOpts) -> Result<ExperimentConfig, CliError> {
    let mut config = match &opts.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "config not found: {}",
                    path.display()
                )));
            }
            ExperimentConfig::from_file(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &opts.system {
        config.system = SystemTag::from_tag(v)?;
    }
    if let Some(v) = opts.noise_var {
        config.noise_var = v;
    }
    if let Some(v) = opts.n_samples {
        config.n_samples = v;
    }
    if let Some(v) = opts.n_g {
        config.n_g = v;
    }
    if let Some(v) = &opts.kernel {
        config.kernel = KernelFamily::from_tag(v)?;
    }
    if let Some(v) = opts.delta {
        config.delta = v;
    }
    if let Some(v) = opts.delta_prime {
        config.delta_prime = v;
    }
    if let Some(v) = &opts.scaling {
        config.scaling = Scaling::from_tag(v)?;
    }
    if let Some(v) = opts.runs {
        config.runs = v;
    }
    if let Some(v) = opts.seed {
        config.seed = v;
    }
    if let Some(v) = opts.grid_c_min {
        config.grid.scale_min = v;
    }
    if let Some(v) = opts.grid_c_max {
        config.grid.scale_max = v;
    }
    if let Some(v) = opts.grid_c_count {
        config.grid.scale_count = v;
    }
    if let Some(v) = opts.grid_lambda_min {
        config.grid.decay_min = v;
    }
    if let Some(v) = opts.grid_lambda_max {
        config.grid.decay_max = v;
    }
    if let Some(v) = opts.grid_lambda_count {
        config.grid.decay_count = v;
    }
    if let Some(v) = &opts.out_dir {
        config.out_dir = v.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(opts) => {
            let config = resolve_config(&opts)?;
            let data = config.simulate_trial_data(config.seed)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("dataset.csv");
            io::write_atomic(&path, &io::dataset_csv(&data))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Identify(opts) => {
            let config = resolve_config(&opts)?;
            let data = config.simulate_trial_data(config.seed)?;
            let grid =
                build_hyperposterior(&data, config.kernel, &config.grid, &Hyperprior::Flat)?;
            let eta_hat = gpfir::estimation::estimate_hyperparameters(&grid);
            let kernel = build_kernel(config.kernel, eta_hat, config.n_g);
            let posterior = regularized_estimate(&data, &kernel)?;
            let written = io::write_identification(&posterior, &config.out_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            println!(
                "eta_hat: c = {:.6e}, lambda = {:.6}",
                eta_hat.scale(),
                eta_hat.decay()
            );
            Ok(())
        }
        Command::Bound { common, method } => {
            let config = resolve_config(&common)?;
            let method = BandMethod::from_tag(&method)?;
            let data = config.simulate_trial_data(config.seed)?;
            let band = match method {
                BandMethod::LeastSquares => {
                    let model = least_squares(&data)?;
                    ls_band(&model, config.delta)?
                }
                BandMethod::Vanilla => {
                    let grid = build_hyperposterior(
                        &data,
                        config.kernel,
                        &config.grid,
                        &Hyperprior::Flat,
                    )?;
                    let eta_hat = gpfir::estimation::estimate_hyperparameters(&grid);
                    let kernel = build_kernel(config.kernel, eta_hat, config.n_g);
                    vanilla_band(&regularized_estimate(&data, &kernel)?, config.delta)?
                }
                BandMethod::Robust => {
                    let grid = build_hyperposterior(
                        &data,
                        config.kernel,
                        &config.grid,
                        &Hyperprior::Flat,
                    )?;
                    robust_band_with_grid(
                        &data,
                        &grid,
                        config.delta,
                        config.delta_prime,
                        config.scaling,
                    )?
                    .band
                }
            };
            std::fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("bands.csv");
            io::write_atomic(&path, &io::band_csv(&band))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Montecarlo { common, jobs } => {
            let config = resolve_config(&common)?;
            let pool = rayon_pool(jobs)?;
            let report = pool.install(|| experiments::run_montecarlo(&config))?;
            let written = io::write_report(&report, &config.out_dir)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            for method in [BandMethod::LeastSquares, BandMethod::Vanilla, BandMethod::Robust] {
                let cov = report.coverage(method);
                let mean_cov = cov.sum() / cov.len() as f64;
                println!(
                    "{}: mean coverage {:.4}, mean half-width {:.6e}",
                    method.tag(),
                    mean_cov,
                    report.overall_mean_width(method)
                );
            }
            Ok(())
        }
        Command::Density(opts) => {
            let config = resolve_config(&opts)?;
            let map = experiments::density_map(&config, config.seed)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("density.csv");
            io::write_atomic(&path, &io::density_csv(&map))?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

//! CSV emission for experiment results.
//!
//! Every writer builds the full file as a string with a one-line header
//! and floats printed with 17 significant digits, so outputs round-trip
//! losslessly and byte-compare across runs. Files land via
//! write-to-temp plus atomic rename; a failed write leaves nothing
//! behind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::estimation::{LeastSquaresModel, PosteriorModel};
use crate::kernels::Hyperparameters;
use crate::linsys::Dataset;
use crate::robust::ErrorBand;

use super::{CoverageReport, DensityMap};

/// 17 significant digits: lossless for f64 and stable across platforms.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write `contents` to `path` through a temporary file in the same
/// directory and an atomic rename.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = fs::write(&tmp, contents);
    if let Err(e) = write {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    Ok(())
}

/// Per-coefficient containment frequencies, one row per coefficient.
pub fn coverage_csv(report: &CoverageReport) -> String {
    let mut out = String::from("l,least_squares,vanilla,robust\n");
    for l in 0..report.n_g {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l,
            format_float(report.ls_coverage[l]),
            format_float(report.vanilla_coverage[l]),
            format_float(report.robust_coverage[l]),
        ));
    }
    out
}

/// Per-coefficient mean half-widths, one row per coefficient.
pub fn widths_csv(report: &CoverageReport) -> String {
    let mut out = String::from("l,least_squares,vanilla,robust\n");
    for l in 0..report.n_g {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l,
            format_float(report.ls_mean_width[l]),
            format_float(report.vanilla_mean_width[l]),
            format_float(report.robust_mean_width[l]),
        ));
    }
    out
}

/// Per-run summaries: seed, hyperparameter estimate, credible rectangle
/// and mean half-widths.
pub fn runs_csv(report: &CoverageReport) -> String {
    let mut out = String::from(
        "run,seed,eta_c,eta_lambda,rect_c_lo,rect_lambda_lo,rect_c_hi,rect_lambda_hi,\
         rect_mass,mean_width_ls,mean_width_vanilla,mean_width_robust\n",
    );
    for t in &report.trials {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            t.run,
            t.seed,
            format_float(t.eta_hat.scale()),
            format_float(t.eta_hat.decay()),
            format_float(t.rectangle.lower().scale()),
            format_float(t.rectangle.lower().decay()),
            format_float(t.rectangle.upper().scale()),
            format_float(t.rectangle.upper().decay()),
            format_float(t.rectangle_mass),
            format_float(t.mean_width_ls),
            format_float(t.mean_width_vanilla),
            format_float(t.mean_width_robust),
        ));
    }
    out
}

/// `(c, lambda, density)` rows of a hyperparameter density table.
pub fn density_csv(map: &DensityMap) -> String {
    let mut out = String::from("c,lambda,density\n");
    for (c, lambda, density) in &map.rows {
        out.push_str(&format!(
            "{},{},{}\n",
            format_float(*c),
            format_float(*lambda),
            format_float(*density),
        ));
    }
    out
}

/// Simulated records as `t,u,y` rows (1-based time).
pub fn dataset_csv(data: &Dataset) -> String {
    let mut out = String::from("t,u,y\n");
    for t in 0..data.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            t + 1,
            format_float(data.inputs()[t]),
            format_float(data.outputs()[t]),
        ));
    }
    out
}

/// Point estimates as `l,g_hat` rows.
pub fn estimate_csv(estimate: &Array1<f64>) -> String {
    let mut out = String::from("l,g_hat\n");
    for (l, g) in estimate.iter().enumerate() {
        out.push_str(&format!("{},{}\n", l, format_float(*g)));
    }
    out
}

/// Dense symmetric matrix, row `l` giving `cov(g_l, g_0..g_{n-1})`.
pub fn covariance_csv(covariance: &Array2<f64>) -> String {
    let n = covariance.ncols();
    let mut out = String::from("l");
    for j in 0..n {
        out.push_str(&format!(",cov_{j}"));
    }
    out.push('\n');
    for i in 0..covariance.nrows() {
        out.push_str(&i.to_string());
        for j in 0..n {
            out.push(',');
            out.push_str(&format_float(covariance[[i, j]]));
        }
        out.push('\n');
    }
    out
}

/// Hyperparameter point as a one-row `c,lambda` table.
pub fn eta_csv(eta: Hyperparameters) -> String {
    format!(
        "c,lambda\n{},{}\n",
        format_float(eta.scale()),
        format_float(eta.decay())
    )
}

/// Band half-widths as `l,half_width` rows.
pub fn band_csv(band: &ErrorBand) -> String {
    let mut out = String::from("l,half_width\n");
    for (l, b) in band.half_widths().iter().enumerate() {
        out.push_str(&format!("{},{}\n", l, format_float(*b)));
    }
    out
}

/// Write the three Monte Carlo tables into `dir`, creating it first.
/// Returns the written paths.
pub fn write_report(report: &CoverageReport, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, contents) in [
        ("coverage.csv", coverage_csv(report)),
        ("widths.csv", widths_csv(report)),
        ("runs.csv", runs_csv(report)),
    ] {
        let path = dir.join(name);
        write_atomic(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Write an identification result (estimate, covariance, hyperparameter
/// point) into `dir`.
pub fn write_identification(
    posterior: &PosteriorModel,
    dir: &Path,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, contents) in [
        ("estimate.csv", estimate_csv(posterior.mean())),
        ("covariance.csv", covariance_csv(posterior.covariance())),
        ("eta.csv", eta_csv(posterior.hyperparameters())),
    ] {
        let path = dir.join(name);
        write_atomic(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Write a least-squares baseline (estimate and covariance) into `dir`.
pub fn write_least_squares(model: &LeastSquaresModel, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, contents) in [
        ("ls_estimate.csv", estimate_csv(model.estimate())),
        ("ls_covariance.csv", covariance_csv(model.covariance())),
    ] {
        let path = dir.join(name);
        write_atomic(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

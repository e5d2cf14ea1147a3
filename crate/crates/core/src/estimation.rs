//! Impulse-response estimators and the marginal likelihood.
//!
//! The kernel-regularized quantities are computed through a symmetric
//! factor `L` of the prior covariance (`K = L Lᵀ`), which avoids ever
//! inverting `K` and reduces every N-dimensional solve to the model
//! order: with `B = Lᵀ ΦᵀΦ L` and `M = B + σ² I`,
//!
//! ```text
//! ĝ = L M⁻¹ Lᵀ Φᵀ y,    Σ = σ² L M⁻¹ Lᵀ,
//! log det(σ² I_N + Φ K Φᵀ) = (N - n_g) log σ² + log det M,
//! yᵀ (σ² I_N + Φ K Φᵀ)⁻¹ y = (yᵀy - wᵀ M⁻¹ w) / σ²,   w = Lᵀ Φᵀ y.
//! ```
//!
//! `ΦᵀΦ`, `Φᵀy` and `yᵀy` are cached on the dataset, so one likelihood
//! evaluation costs one factorization of an n_g × n_g matrix.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::kernels::{kernel_factor, Hyperparameters, KernelFamily, KernelMatrix};
use crate::linalg;
use crate::linsys::Dataset;
use crate::robust::HyperGrid;

/// Condition-number guard for the plain least-squares solve.
const MAX_GRAM_CONDITION: f64 = 1e12;

/// Least-squares estimate with its exact error covariance
/// `σ² (ΦᵀΦ)⁻¹`.
#[derive(Debug, Clone)]
pub struct LeastSquaresModel {
    estimate: Array1<f64>,
    covariance: Array2<f64>,
}

impl LeastSquaresModel {
    pub fn estimate(&self) -> &Array1<f64> {
        &self.estimate
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }
}

/// Posterior mean and covariance of the kernel-regularized estimator at
/// fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    mean: Array1<f64>,
    covariance: Array2<f64>,
    family: KernelFamily,
    eta: Hyperparameters,
}

impl PosteriorModel {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.eta
    }
}

/// Log marginal likelihood of the outputs given inputs and
/// hyperparameters, with the full Gaussian normalizer included so values
/// are comparable and integrable across hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMarginal(pub f64);

impl LogMarginal {
    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Plain least squares `ĝ = (ΦᵀΦ)⁻¹ Φᵀ y`.
///
/// Rejects regressors whose Gram matrix is rank deficient or has a
/// condition number above 1e12.
pub fn least_squares(data: &Dataset) -> Result<LeastSquaresModel> {
    let gram = data.gram();
    let (min_eig, max_eig) = linalg::eigenvalue_extremes(gram);
    if min_eig <= 0.0 || max_eig / min_eig > MAX_GRAM_CONDITION {
        let cond = if min_eig > 0.0 {
            max_eig / min_eig
        } else {
            f64::INFINITY
        };
        return Err(Error::SingularRegressor(cond));
    }
    let l = linalg::cholesky(gram)?;
    let estimate = linalg::cholesky_solve(&l, data.regressor_t_outputs());
    let covariance = linalg::cholesky_inverse(&l) * data.noise_variance();
    Ok(LeastSquaresModel {
        estimate,
        covariance,
    })
}

/// Residual-based noise variance estimate `‖y - Φ ĝ‖² / (N - n_g)`.
///
/// Utility for callers without an independent noise calibration; the
/// experiment pipeline treats the noise variance as known.
pub fn estimate_noise_variance(data: &Dataset) -> Result<f64> {
    let n = data.len();
    let n_g = data.model_order();
    if n <= n_g {
        return Err(Error::ShortDataset { n, n_g });
    }
    let ls = least_squares(data)?;
    let residual = data.outputs() - &data.regressor().dot(ls.estimate());
    Ok(residual.dot(&residual) / (n - n_g) as f64)
}

/// Kernel-regularized estimate and posterior covariance at the kernel's
/// hyperparameters.
pub fn regularized_estimate(data: &Dataset, kernel: &KernelMatrix) -> Result<PosteriorModel> {
    if kernel.order() != data.model_order() {
        return Err(Error::DimensionMismatch(format!(
            "kernel order {} vs model order {}",
            kernel.order(),
            data.model_order()
        )));
    }
    let factor = kernel.factor();
    let (mean, covariance) = posterior_from_factor(data, &factor)?;
    Ok(PosteriorModel {
        mean,
        covariance,
        family: kernel.family(),
        eta: kernel.hyperparameters(),
    })
}

/// Posterior mean and covariance from a symmetric factor of the prior
/// covariance.
pub(crate) fn posterior_from_factor(
    data: &Dataset,
    factor: &Array2<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let s2 = data.noise_variance();
    if s2 <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let n_g = data.model_order();
    let mut m = factor.t().dot(data.gram()).dot(factor);
    for i in 0..n_g {
        m[[i, i]] += s2;
    }
    let lm = linalg::cholesky(&m)?;
    let inv = linalg::cholesky_inverse(&lm);
    let w = factor.t().dot(data.regressor_t_outputs());
    let mean = factor.dot(&inv.dot(&w));
    let mut covariance = factor.dot(&inv).dot(&factor.t()) * s2;
    for i in 0..n_g {
        for j in 0..i {
            let v = 0.5 * (covariance[[i, j]] + covariance[[j, i]]);
            covariance[[i, j]] = v;
            covariance[[j, i]] = v;
        }
    }
    Ok((mean, covariance))
}

/// Diagonal of the posterior covariance from a prior factor, without
/// forming the full matrix: with `M = LᵀΦᵀΦL + σ²I = L_M L_Mᵀ`,
/// `Σ = σ² (L_M⁻¹ Lᵀ)ᵀ (L_M⁻¹ Lᵀ)`, so the diagonal is σ² times the
/// squared column norms of one triangular solve. Workhorse of the
/// worst-case variance search.
pub(crate) fn posterior_variance_diag(data: &Dataset, factor: &Array2<f64>) -> Result<Array1<f64>> {
    let s2 = data.noise_variance();
    if s2 <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let n_g = data.model_order();
    let mut m = factor.t().dot(data.gram()).dot(factor);
    for i in 0..n_g {
        m[[i, i]] += s2;
    }
    let lm = linalg::cholesky(&m)?;
    let t = linalg::forward_substitute_mat(&lm, &factor.t().to_owned());
    let mut diag = Array1::<f64>::zeros(n_g);
    for j in 0..n_g {
        let mut acc = 0.0;
        for k in 0..n_g {
            acc += t[[k, j]] * t[[k, j]];
        }
        diag[j] = s2 * acc;
    }
    Ok(diag)
}

/// `yᵀ Φ (ΦᵀΦ + σ² K⁻¹)⁻¹ Φᵀ y` from a factor of `K`, evaluated as
/// `wᵀ M⁻¹ w`. Equals `σ² ĝᵀ Σ⁻¹ ĝ`, the scaled squared norm of the
/// estimate in the posterior-kernel geometry.
pub(crate) fn weighted_output_energy(data: &Dataset, factor: &Array2<f64>) -> Result<f64> {
    let s2 = data.noise_variance();
    if s2 <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let n_g = data.model_order();
    let mut m = factor.t().dot(data.gram()).dot(factor);
    for i in 0..n_g {
        m[[i, i]] += s2;
    }
    let lm = linalg::cholesky(&m)?;
    let w = factor.t().dot(data.regressor_t_outputs());
    let z = linalg::cholesky_solve(&lm, &w);
    Ok(w.dot(&z))
}

/// Squared norm of the estimate in the prior-kernel geometry,
/// `ĝᵀ K⁻¹ ĝ`, with the crate-standard diagonal jitter when `K` is
/// numerically singular.
pub fn rkhs_norm_sq(model: &PosteriorModel, kernel: &KernelMatrix) -> Result<f64> {
    let (l, _) = linalg::cholesky_jitter(kernel.matrix(), 1e-12)?;
    let x = linalg::cholesky_solve(&l, model.mean());
    Ok(model.mean().dot(&x))
}

/// Log marginal likelihood at one hyperparameter point.
pub fn log_marginal(
    data: &Dataset,
    family: KernelFamily,
    eta: Hyperparameters,
) -> Result<LogMarginal> {
    let factor = kernel_factor(family, eta, data.model_order());
    log_marginal_from_factor(data, &factor)
}

pub(crate) fn log_marginal_from_factor(
    data: &Dataset,
    factor: &Array2<f64>,
) -> Result<LogMarginal> {
    let s2 = data.noise_variance();
    if s2 <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let n = data.len() as f64;
    let n_g = data.model_order();
    let mut m = factor.t().dot(data.gram()).dot(factor);
    for i in 0..n_g {
        m[[i, i]] += s2;
    }
    let lm = linalg::cholesky(&m)?;
    let w = factor.t().dot(data.regressor_t_outputs());
    let z = linalg::cholesky_solve(&lm, &w);
    let log_det = (n - n_g as f64) * s2.ln() + linalg::cholesky_log_det(&lm);
    let quad = (data.outputs_sq() - w.dot(&z)) / s2;
    let value = -0.5 * log_det - 0.5 * quad - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    Ok(LogMarginal(value))
}

/// Grid maximizer of the log marginal likelihood; ties resolve to the
/// smaller scale, then the smaller decay, so the result does not depend
/// on evaluation order.
pub fn estimate_hyperparameters(grid: &HyperGrid) -> Hyperparameters {
    let (i, j) = grid.likelihood_maximizer_index();
    grid.point(i, j)
}

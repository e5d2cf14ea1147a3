//! Structured prior covariances for stable impulse responses.
//!
//! Three families are supported, all parameterized by a scale `c >= 0`
//! and a decay `0 <= lambda <= 1`, evaluated at lags `0..n_g-1`:
//!
//! * `DI`: diagonal, `K[i,i] = c λ^i`;
//! * `TC`: tuned/correlated, `K[i,j] = c λ^max(i,j)`;
//! * `SS`: stable spline, `K[i,j] = c λ^{2 max(i,j)} (λ^min(i,j)/2 - λ^max(i,j)/6)`.
//!
//! The module also hosts the machinery for comparing kernels across
//! hyperparameters in the positive semidefinite order (the basis of the
//! worst-case posterior variance bounds) and a closed-form determinant
//! for max-index matrices that doubles as a test oracle.

use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg;

/// Kernel hyperparameters: a nonnegative scale and a decay in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    scale: f64,
    decay: f64,
}

impl Hyperparameters {
    pub fn new(scale: f64, decay: f64) -> Result<Self> {
        // NaN fails both checks.
        let scale_ok = scale >= 0.0;
        let decay_ok = (0.0..=1.0).contains(&decay);
        if !scale_ok || !decay_ok {
            return Err(Error::HyperparameterDomain { scale, decay });
        }
        Ok(Self { scale, decay })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }
}

/// Supported kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Diagonal,
    TunedCorrelated,
    StableSpline,
}

impl KernelFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            KernelFamily::Diagonal => "di",
            KernelFamily::TunedCorrelated => "tc",
            KernelFamily::StableSpline => "ss",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "di" => Ok(KernelFamily::Diagonal),
            "tc" => Ok(KernelFamily::TunedCorrelated),
            "ss" => Ok(KernelFamily::StableSpline),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Axis-aligned rectangle `[lower, upper]` in hyperparameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperRectangle {
    lower: Hyperparameters,
    upper: Hyperparameters,
}

impl HyperRectangle {
    pub fn new(lower: Hyperparameters, upper: Hyperparameters) -> Result<Self> {
        if lower.scale() > upper.scale() || lower.decay() > upper.decay() {
            return Err(Error::InvalidRectangle);
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> Hyperparameters {
        self.lower
    }

    pub fn upper(&self) -> Hyperparameters {
        self.upper
    }

    pub fn contains(&self, eta: Hyperparameters) -> bool {
        (self.lower.scale()..=self.upper.scale()).contains(&eta.scale())
            && (self.lower.decay()..=self.upper.decay()).contains(&eta.decay())
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }
}

/// A kernel matrix together with the family and hyperparameters that
/// produced it, so downstream code can pick specialized factorizations.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    family: KernelFamily,
    eta: Hyperparameters,
    matrix: Array2<f64>,
}

impl KernelMatrix {
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.eta
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    /// Symmetric factor `L` with `L Lᵀ ≈ K`.
    ///
    /// Diagonal and TC kernels use exact closed-form factors that stay
    /// valid when the decay powers underflow; the stable-spline kernel
    /// falls back to a jittered Cholesky and, failing that, an
    /// eigenvalue factor with negatives clamped.
    pub fn factor(&self) -> Array2<f64> {
        kernel_factor(self.family, self.eta, self.order())
    }
}

/// Powers `λ^0..λ^max` by repeated multiplication; the kernel loops are
/// hot enough that per-entry `powi` shows up in profiles.
fn decay_powers(lam: f64, max: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(max + 1);
    let mut v = 1.0;
    for _ in 0..=max {
        p.push(v);
        v *= lam;
    }
    p
}

/// Build the kernel matrix for a family at the given hyperparameters.
pub fn build_kernel(family: KernelFamily, eta: Hyperparameters, n_g: usize) -> KernelMatrix {
    assert!(n_g >= 1, "kernel order must be at least 1");
    let (c, lam) = (eta.scale(), eta.decay());
    let mut k = Array2::<f64>::zeros((n_g, n_g));
    match family {
        KernelFamily::Diagonal => {
            let pow = decay_powers(lam, n_g - 1);
            for i in 0..n_g {
                k[[i, i]] = c * pow[i];
            }
        }
        KernelFamily::TunedCorrelated => {
            let pow = decay_powers(lam, n_g - 1);
            for i in 0..n_g {
                for j in 0..n_g {
                    k[[i, j]] = c * pow[i.max(j)];
                }
            }
        }
        KernelFamily::StableSpline => {
            let pow = decay_powers(lam, 3 * (n_g - 1));
            for i in 0..n_g {
                for j in 0..n_g {
                    let mx = i.max(j);
                    let mn = i.min(j);
                    k[[i, j]] = c * pow[2 * mx] * (pow[mn] / 2.0 - pow[mx] / 6.0);
                }
            }
        }
    }
    KernelMatrix {
        family,
        eta,
        matrix: k,
    }
}

/// Trace of the kernel matrix without building it.
pub fn kernel_trace(family: KernelFamily, eta: Hyperparameters, n_g: usize) -> f64 {
    let (c, lam) = (eta.scale(), eta.decay());
    match family {
        KernelFamily::Diagonal | KernelFamily::TunedCorrelated => decay_powers(lam, n_g - 1)
            .iter()
            .map(|p| c * p)
            .sum(),
        KernelFamily::StableSpline => {
            let lam3 = lam * lam * lam;
            decay_powers(lam3, n_g - 1).iter().map(|p| c * p / 3.0).sum()
        }
    }
}

/// Decay-compensation exponent for comparing kernels whose lags are
/// indexed from one: zero for the diagonal family and
/// `-1/ln(decay_upper) - 1` for TC.
///
/// The matrices built by [`build_kernel`] index lags from zero, where the
/// comparison needs one extra power of the decay ratio; use
/// [`ordering_exponent`] for anything that must actually dominate in the
/// positive semidefinite order.
pub fn gamma_exponent(family: KernelFamily, decay_upper: f64) -> Result<f64> {
    match family {
        KernelFamily::Diagonal => Ok(0.0),
        KernelFamily::TunedCorrelated => {
            if decay_upper <= 0.0 || decay_upper >= 1.0 {
                return Err(Error::SingularGamma(decay_upper));
            }
            Ok(-1.0 / decay_upper.ln() - 1.0)
        }
        KernelFamily::StableSpline => Err(Error::UnsupportedFamily(family)),
    }
}

/// Exponent `κ` such that for decays `λ1 <= λ2` and scales with
/// `c2 >= (λ2/λ1)^κ c1`, the kernel at `(c2, λ2)` dominates the kernel at
/// `(c1, λ1)` in the positive semidefinite order, for lags starting at
/// zero as built by [`build_kernel`].
///
/// `x ↦ λ2^x - λ1^x` is nonincreasing exactly from `x = -1/ln λ2`
/// onwards, and the lag-zero diagonal entry puts that point itself into
/// the comparison, so TC needs `κ = -1/ln λ2`, one more than
/// [`gamma_exponent`]. The diagonal family needs no compensation.
pub fn ordering_exponent(family: KernelFamily, decay_upper: f64) -> Result<f64> {
    match family {
        KernelFamily::Diagonal => Ok(0.0),
        KernelFamily::TunedCorrelated => {
            if decay_upper <= 0.0 || decay_upper >= 1.0 {
                return Err(Error::SingularGamma(decay_upper));
            }
            Ok(-1.0 / decay_upper.ln())
        }
        KernelFamily::StableSpline => Err(Error::UnsupportedFamily(family)),
    }
}

/// Closed-form determinant of the max-index matrix `M[i,j] = m[max(i,j)]`:
/// `m[n-1] * Π (m[i] - m[i+1])`.
pub fn maxindex_det(m: &[f64]) -> f64 {
    assert!(!m.is_empty(), "need at least one entry");
    let mut det = m[m.len() - 1];
    for w in m.windows(2) {
        det *= w[0] - w[1];
    }
    det
}

/// Build the max-index matrix `M[i,j] = m[max(i,j)]`.
pub fn maxindex_matrix(m: &[f64]) -> Array2<f64> {
    let n = m.len();
    Array2::from_shape_fn((n, n), |(i, j)| m[i.max(j)])
}

/// Factor `L` with `L Lᵀ = M` for a max-index matrix with nonincreasing
/// nonnegative entries. Exact up to rounding; used for the DI/TC kernels
/// where `m[l] = c λ^l`.
fn maxindex_factor(m: &[f64]) -> Array2<f64> {
    let n = m.len();
    let mut l = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        // Telescoping weights of the reversed cumulative decomposition.
        let d = if k == 0 {
            m[n - 1]
        } else {
            m[n - 1 - k] - m[n - k]
        };
        let w = d.max(0.0).sqrt();
        for i in 0..n {
            if n - 1 - i >= k {
                l[[i, k]] = w;
            }
        }
    }
    l
}

/// Symmetric factor of the kernel matrix; see [`KernelMatrix::factor`].
pub fn kernel_factor(family: KernelFamily, eta: Hyperparameters, n_g: usize) -> Array2<f64> {
    let (c, lam) = (eta.scale(), eta.decay());
    match family {
        KernelFamily::Diagonal => {
            let pow = decay_powers(lam, n_g - 1);
            let mut l = Array2::<f64>::zeros((n_g, n_g));
            for i in 0..n_g {
                l[[i, i]] = (c * pow[i]).max(0.0).sqrt();
            }
            l
        }
        KernelFamily::TunedCorrelated => {
            let m: Vec<f64> = decay_powers(lam, n_g - 1).iter().map(|p| c * p).collect();
            maxindex_factor(&m)
        }
        KernelFamily::StableSpline => {
            let k = build_kernel(family, eta, n_g);
            match linalg::cholesky_jitter(k.matrix(), 1e-12) {
                Ok((l, _)) => l,
                Err(_) => linalg::psd_factor_eigen(k.matrix()),
            }
        }
    }
}

/// True when `K(eta_a) - K(eta_b)` is positive semidefinite, with the
/// crate-wide relative eigenvalue tolerance of 1e-10.
pub fn kernel_dominates(
    family: KernelFamily,
    eta_a: Hyperparameters,
    eta_b: Hyperparameters,
    n_g: usize,
) -> bool {
    let ka = build_kernel(family, eta_a, n_g);
    let kb = build_kernel(family, eta_b, n_g);
    let diff = ka.matrix() - kb.matrix();
    linalg::is_psd(&diff, 1e-10)
}

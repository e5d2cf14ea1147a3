//! Kernel-based identification of FIR models of stable linear systems.
//!
//! The crate estimates a truncated impulse response from input/output data
//! three ways and attaches element-wise stochastic error bands to each:
//!
//! * plain least squares with its exact Gaussian bands,
//! * kernel ridge regression (equivalently Gaussian-process regression with
//!   a structured stable prior) with bands from the posterior covariance at
//!   the estimated hyperparameters, and
//! * a robust variant whose bands stay valid when the kernel hyperparameters
//!   are unknown: a high-probability rectangle for the hyperparameters is
//!   read off the marginal-likelihood surface and the bands use the
//!   worst-case posterior variance over that rectangle.
//!
//! Module layout follows the pipeline: [`linsys`] builds test systems and
//! simulated datasets, [`kernels`] the structured prior covariances,
//! [`estimation`] the estimators and the marginal likelihood, [`robust`] the
//! credible rectangle and the error bands, and [`experiments`] the Monte
//! Carlo coverage harness behind the CLI.

pub mod error;
pub mod estimation;
pub mod experiments;
pub mod kernels;
pub mod linalg;
pub mod linsys;
pub mod robust;

pub use error::{Error, Result};
pub use kernels::{HyperRectangle, Hyperparameters, KernelFamily};
pub use linsys::{Dataset, ImpulseResponse, TransferFunction};
pub use robust::{BandMethod, ErrorBand, HyperGridSpec, Scaling};

//! Hyperparameter credible rectangles, worst-case posterior variances,
//! and the three element-wise error bands.
//!
//! The robust band works in three steps. The marginal likelihood over a
//! hyperparameter grid is normalized into a posterior for the
//! hyperparameters; a grid-aligned rectangle containing the likelihood
//! maximizer and carrying mass at least `1 - δ'` is selected by
//! minimizing a band-size objective; the per-coefficient band widths then
//! scale the worst-case posterior standard deviation over that rectangle.
//! For diagonal and TC kernels the worst case has a closed form via the
//! kernel ordering exponent; for the stable-spline family it is found by
//! maximizing the posterior variance over the rectangle numerically.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{
    log_marginal_from_factor, posterior_variance_diag, weighted_output_energy, LeastSquaresModel,
    PosteriorModel,
};
use crate::kernels::{
    kernel_factor, kernel_trace, ordering_exponent, HyperRectangle, Hyperparameters, KernelFamily,
};
use crate::linalg;
use crate::linsys::Dataset;

/// Two-sided standard Gaussian quantile: the value `μ` with
/// `P(|Z| <= μ) = 1 - δ`, i.e. the `(1 - δ/2)`-quantile.
pub fn gaussian_quantile(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::ConfidenceDomain(delta));
    }
    let p = 1.0 - delta / 2.0;
    Ok(normal_quantile(p))
}

/// Standard normal cumulative distribution function.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Complementary error function via the alternating series for small
/// arguments and a Lentz continued fraction in the tail; both branches
/// are accurate to a few ulps over the range the quantile needs.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 3.0 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..120 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        1.0 - sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // erfc(x) = exp(-x²)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        let mut c = x;
        let mut d = 0.0f64;
        for n in 1..200 {
            let a = n as f64 / 2.0;
            d = x + a * d;
            if d == 0.0 {
                d = 1e-300;
            }
            c = x + a / c;
            if c == 0.0 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
    }
}

/// Standard normal quantile by Newton iterations on the CDF from a
/// tail-aware start. Accurate to well below 1e-10 in absolute value.
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -normal_quantile(1.0 - p);
    }
    // Crude tail-aware start, then Newton.
    let mut x = (-2.0 * (1.0 - p).ln()).sqrt().clamp(0.0, 40.0);
    if x == 0.0 {
        x = 0.1;
    }
    for _ in 0..60 {
        let err = normal_cdf(x) - p;
        let step = err / normal_pdf(x).max(1e-300);
        x -= step;
        if step.abs() <= 1e-13 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Band-width scaling mode for the robust band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Scale by the plain Gaussian quantile. Default; the theoretical
    /// constant is far too conservative in practice.
    Practical,
    /// Scale by the full constant `μ_δ + (2/σ)‖y‖_S`, which carries the
    /// proven joint confidence level `(1-δ)(1-δ')`.
    Theoretical,
}

impl Scaling {
    pub fn tag(&self) -> &'static str {
        match self {
            Scaling::Practical => "practical",
            Scaling::Theoretical => "theoretical",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "practical" => Ok(Scaling::Practical),
            "theoretical" => Ok(Scaling::Theoretical),
            other => Err(Error::Config(format!("unknown scaling mode '{other}'"))),
        }
    }
}

/// Which estimator a band belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandMethod {
    LeastSquares,
    Vanilla,
    Robust,
}

impl BandMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            BandMethod::LeastSquares => "ls",
            BandMethod::Vanilla => "vanilla",
            BandMethod::Robust => "robust",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "ls" => Ok(BandMethod::LeastSquares),
            "vanilla" => Ok(BandMethod::Vanilla),
            "robust" => Ok(BandMethod::Robust),
            other => Err(Error::Config(format!("unknown band method '{other}'"))),
        }
    }
}

/// Per-coefficient half-widths `b_l`: the claim is
/// `|ĝ_l - g_l| <= b_l` with the method's stated probability.
#[derive(Debug, Clone)]
pub struct ErrorBand {
    half_widths: Array1<f64>,
    method: BandMethod,
    delta: f64,
    delta_prime: Option<f64>,
    scaling: Option<Scaling>,
}

impl ErrorBand {
    pub fn half_widths(&self) -> &Array1<f64> {
        &self.half_widths
    }

    pub fn method(&self) -> BandMethod {
        self.method
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_prime(&self) -> Option<f64> {
        self.delta_prime
    }

    pub fn scaling(&self) -> Option<Scaling> {
        self.scaling
    }

    pub fn mean_half_width(&self) -> f64 {
        self.half_widths.sum() / self.half_widths.len() as f64
    }

    /// True when the band around `estimate` contains `truth` at
    /// coefficient `l`.
    pub fn contains(&self, estimate: f64, truth: f64, l: usize) -> bool {
        (estimate - truth).abs() <= self.half_widths[l]
    }
}

/// Grid layout for the hyperparameter posterior: log-spaced scale
/// points and linearly spaced decay points, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGridSpec {
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_count: usize,
    pub decay_min: f64,
    pub decay_max: f64,
    pub decay_count: usize,
}

impl HyperGridSpec {
    pub fn new(
        scale_min: f64,
        scale_max: f64,
        scale_count: usize,
        decay_min: f64,
        decay_max: f64,
        decay_count: usize,
    ) -> Result<Self> {
        let spec = Self {
            scale_min,
            scale_max,
            scale_count,
            decay_min,
            decay_max,
            decay_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_count == 0 || self.decay_count == 0 {
            return Err(Error::EmptyGrid);
        }
        // NaN bounds fail the positive checks.
        let scale_ok = self.scale_min > 0.0 && self.scale_min <= self.scale_max;
        if !scale_ok {
            return Err(Error::Config(format!(
                "scale grid must satisfy 0 < min <= max, got [{}, {}]",
                self.scale_min, self.scale_max
            )));
        }
        let decay_ok =
            self.decay_min > 0.0 && self.decay_min <= self.decay_max && self.decay_max < 1.0;
        if !decay_ok {
            return Err(Error::Config(format!(
                "decay grid must satisfy 0 < min <= max < 1, got [{}, {}]",
                self.decay_min, self.decay_max
            )));
        }
        if self.scale_count == 1 && self.scale_min != self.scale_max {
            return Err(Error::Config(
                "single-point scale grid needs min == max".into(),
            ));
        }
        if self.decay_count == 1 && self.decay_min != self.decay_max {
            return Err(Error::Config(
                "single-point decay grid needs min == max".into(),
            ));
        }
        Ok(())
    }

    pub fn scale_points(&self) -> Vec<f64> {
        linspace(self.scale_min.ln(), self.scale_max.ln(), self.scale_count)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    pub fn decay_points(&self) -> Vec<f64> {
        linspace(self.decay_min, self.decay_max, self.decay_count)
    }
}

impl Default for HyperGridSpec {
    /// 40×40 grid, scale log-spaced over `[1e-3, 1e3]`, decay linear over
    /// `[0.01, 0.99]`; wide enough for both benchmark systems while
    /// staying away from the degenerate decay endpoints.
    fn default() -> Self {
        Self {
            scale_min: 1e-3,
            scale_max: 1e3,
            scale_count: 40,
            decay_min: 0.01,
            decay_max: 0.99,
            decay_count: 40,
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Prior over hyperparameters for the grid posterior.
#[derive(Debug, Clone)]
pub enum Hyperprior {
    /// Constant density on the grid box in the `(scale, decay)` plane.
    Flat,
    /// Tabulated nonnegative density values at the grid points, same
    /// layout as the grid (scale-major).
    Tabulated(Array2<f64>),
}

/// Discretized hyperparameter posterior: log-likelihood values at the
/// grid points and normalized cell masses, with prefix sums for
/// constant-time rectangle mass queries.
///
/// Quadrature is the midpoint rule in `(log scale, decay)` coordinates;
/// the prior density picks up the Jacobian factor `scale` there.
#[derive(Debug, Clone)]
pub struct HyperGrid {
    family: KernelFamily,
    n_g: usize,
    scale_points: Vec<f64>,
    decay_points: Vec<f64>,
    scale_widths: Vec<f64>,
    decay_widths: Vec<f64>,
    log_likelihood: Array2<f64>,
    weights: Array2<f64>,
    cumulative: Array2<f64>,
}

impl HyperGrid {
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn model_order(&self) -> usize {
        self.n_g
    }

    pub fn n_scale(&self) -> usize {
        self.scale_points.len()
    }

    pub fn n_decay(&self) -> usize {
        self.decay_points.len()
    }

    pub fn scale_points(&self) -> &[f64] {
        &self.scale_points
    }

    pub fn decay_points(&self) -> &[f64] {
        &self.decay_points
    }

    pub fn log_likelihood(&self) -> &Array2<f64> {
        &self.log_likelihood
    }

    /// Normalized cell masses (they sum to one).
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn point(&self, scale_idx: usize, decay_idx: usize) -> Hyperparameters {
        Hyperparameters::new(self.scale_points[scale_idx], self.decay_points[decay_idx])
            .expect("grid points are inside the hyperparameter domain")
    }

    /// Cell area in `(log scale, decay)` coordinates.
    pub fn cell_area(&self, scale_idx: usize, decay_idx: usize) -> f64 {
        self.scale_widths[scale_idx] * self.decay_widths[decay_idx]
    }

    /// Mass of the inclusive index rectangle.
    pub fn mass(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> f64 {
        self.cumulative[[i2 + 1, j2 + 1]] - self.cumulative[[i1, j2 + 1]]
            - self.cumulative[[i2 + 1, j1]]
            + self.cumulative[[i1, j1]]
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative[[self.n_scale(), self.n_decay()]]
    }

    /// Hyperparameter rectangle spanned by the inclusive index bounds.
    pub fn rectangle(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> HyperRectangle {
        HyperRectangle::new(self.point(i1, j1), self.point(i2, j2))
            .expect("grid index rectangles are ordered")
    }

    /// Index of the log-likelihood maximizer; ties resolve to the smaller
    /// scale index, then the smaller decay index.
    pub fn likelihood_maximizer_index(&self) -> (usize, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = (0, 0);
        for i in 0..self.n_scale() {
            for j in 0..self.n_decay() {
                let v = self.log_likelihood[[i, j]];
                if v > best {
                    best = v;
                    arg = (i, j);
                }
            }
        }
        arg
    }
}

/// Evaluate the marginal likelihood over the grid and normalize it into
/// a posterior, log-sum-exp stabilized.
pub fn build_hyperposterior(
    data: &Dataset,
    family: KernelFamily,
    spec: &HyperGridSpec,
    prior: &Hyperprior,
) -> Result<HyperGrid> {
    spec.validate()?;
    let scale_points = spec.scale_points();
    let decay_points = spec.decay_points();
    let nc = scale_points.len();
    let nl = decay_points.len();
    if let Hyperprior::Tabulated(table) = prior {
        if table.dim() != (nc, nl) {
            return Err(Error::Config(format!(
                "prior table is {:?}, grid is {:?}",
                table.dim(),
                (nc, nl)
            )));
        }
        if !table.iter().all(|v| *v >= 0.0) {
            return Err(Error::Config("prior table has negative entries".into()));
        }
    }

    let n_g = data.model_order();
    let loglik_flat: Result<Vec<f64>> = (0..nc * nl)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / nl, idx % nl);
            let eta = Hyperparameters::new(scale_points[i], decay_points[j])?;
            let factor = kernel_factor(family, eta, n_g);
            Ok(log_marginal_from_factor(data, &factor)?.value())
        })
        .collect();
    let log_likelihood = Array2::from_shape_vec((nc, nl), loglik_flat?)
        .expect("shape matches by construction");

    let scale_widths = midpoint_widths(&scale_points.iter().map(|c| c.ln()).collect::<Vec<_>>());
    let decay_widths = midpoint_widths(&decay_points);

    let mut log_weight = Array2::<f64>::zeros((nc, nl));
    for i in 0..nc {
        for j in 0..nl {
            let log_prior = match prior {
                Hyperprior::Flat => 0.0,
                Hyperprior::Tabulated(table) => table[[i, j]].ln(),
            };
            log_weight[[i, j]] = log_likelihood[[i, j]]
                + log_prior
                + scale_points[i].ln()
                + scale_widths[i].ln()
                + decay_widths[j].ln();
        }
    }
    let max_lw = log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return Err(Error::Config(
            "hyperparameter density degenerated to zero everywhere".into(),
        ));
    }
    let mut weights = log_weight.mapv(|lw| (lw - max_lw).exp());
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "log-sum-exp keeps at least one cell positive");
    weights.mapv_inplace(|w| w / total);

    let mut cumulative = Array2::<f64>::zeros((nc + 1, nl + 1));
    for i in 0..nc {
        for j in 0..nl {
            cumulative[[i + 1, j + 1]] = weights[[i, j]] + cumulative[[i, j + 1]]
                + cumulative[[i + 1, j]]
                - cumulative[[i, j]];
        }
    }

    Ok(HyperGrid {
        family,
        n_g,
        scale_points,
        decay_points,
        scale_widths,
        decay_widths,
        log_likelihood,
        weights,
        cumulative,
    })
}

/// Midpoint cell widths for sorted points, end cells clipped at the
/// outer points. A single point gets unit width (it normalizes away).
fn midpoint_widths(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            let lo = if i == 0 { points[0] } else { 0.5 * (points[i - 1] + points[i]) };
            let hi = if i == n - 1 {
                points[n - 1]
            } else {
                0.5 * (points[i] + points[i + 1])
            };
            hi - lo
        })
        .collect()
}

/// A grid-aligned hyperparameter rectangle with verified posterior mass.
#[derive(Debug, Clone)]
pub struct CredibleSet {
    rectangle: HyperRectangle,
    index_bounds: (usize, usize, usize, usize),
    mass: f64,
    delta_prime: f64,
}

impl CredibleSet {
    pub fn rectangle(&self) -> HyperRectangle {
        self.rectangle
    }

    /// Inclusive `(scale_lo, scale_hi, decay_lo, decay_hi)` grid indices.
    pub fn index_bounds(&self) -> (usize, usize, usize, usize) {
        self.index_bounds
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }
}

/// Candidate ranking tuple: objective, then area in `(log scale, decay)`
/// coordinates, then lexicographic corner indices.
fn better(
    obj_a: f64,
    area_a: f64,
    corners_a: [usize; 4],
    obj_b: f64,
    area_b: f64,
    corners_b: [usize; 4],
) -> bool {
    if obj_a != obj_b {
        return obj_a < obj_b;
    }
    if area_a != area_b {
        return area_a < area_b;
    }
    corners_a < corners_b
}

/// All inclusion-minimal feasible index rectangles: for every choice of
/// scale range and lower decay index (all containing the anchor), the
/// smallest upper decay index that reaches the mass target. Rectangles
/// with a larger upper decay index are never optimal because every
/// objective used here is nondecreasing under rectangle growth, and the
/// area tie-break prefers the smaller set.
fn feasible_candidates(
    grid: &HyperGrid,
    anchor: (usize, usize),
    target: f64,
) -> Vec<[usize; 4]> {
    let (ic, jc) = anchor;
    let nc = grid.n_scale();
    let nl = grid.n_decay();
    let mut out = Vec::new();
    for i1 in 0..=ic {
        for i2 in ic..nc {
            for j1 in 0..=jc {
                let mut found = None;
                for j2 in jc..nl {
                    if grid.mass(i1, i2, j1, j2) >= target {
                        found = Some(j2);
                        break;
                    }
                }
                if let Some(j2) = found {
                    out.push([i1, i2, j1, j2]);
                }
            }
        }
    }
    out
}

fn rect_area(grid: &HyperGrid, c: [usize; 4]) -> f64 {
    (grid.scale_points[c[1]].ln() - grid.scale_points[c[0]].ln())
        * (grid.decay_points[c[3]] - grid.decay_points[c[2]])
}

/// Closed-form band-size objective for DI/TC rectangles: the compensated
/// trace `(λ2/λ1)^κ tr K(c2, λ2)`, a monotone proxy for the total width
/// of the uniform-bound band.
fn trace_objective(
    family: KernelFamily,
    grid: &HyperGrid,
    c: [usize; 4],
) -> Result<f64> {
    let lam1 = grid.decay_points[c[2]];
    let lam2 = grid.decay_points[c[3]];
    let kappa = ordering_exponent(family, lam2)?;
    let ratio = if kappa == 0.0 {
        1.0
    } else {
        (lam2 / lam1).powf(kappa)
    };
    let upper = grid.point(c[1], c[3]);
    Ok(ratio * kernel_trace(family, upper, grid.model_order()))
}

/// Posterior variance diagonals at every grid point, scale-major.
fn grid_variance_table(data: &Dataset, grid: &HyperGrid) -> Result<Vec<Array1<f64>>> {
    let nl = grid.n_decay();
    (0..grid.n_scale() * nl)
        .into_par_iter()
        .map(|idx| {
            let eta = grid.point(idx / nl, idx % nl);
            let factor = kernel_factor(grid.family(), eta, data.model_order());
            posterior_variance_diag(data, &factor)
        })
        .collect()
}

/// Visit every candidate with the per-coefficient maxima of `table` over
/// the candidate rectangle. Candidates are grouped by decay range so the
/// row maxima are shared.
fn visit_candidates_with_rectmax<F: FnMut(&[usize; 4], &[f64])>(
    grid: &HyperGrid,
    table: &[Array1<f64>],
    candidates: &[[usize; 4]],
    anchor_scale: usize,
    mut visit: F,
) {
    let nc = grid.n_scale();
    let nl = grid.n_decay();
    let n_g = grid.model_order();
    let mut groups: BTreeMap<(usize, usize), Vec<[usize; 4]>> = BTreeMap::new();
    for c in candidates {
        groups.entry((c[2], c[3])).or_default().push(*c);
    }
    let mut colmax = vec![0.0f64; nc * n_g];
    let mut down = vec![0.0f64; nc * n_g];
    let mut up = vec![0.0f64; nc * n_g];
    let mut buf = vec![0.0f64; n_g];
    for ((j1, j2), members) in groups {
        for i in 0..nc {
            for l in 0..n_g {
                let mut m = f64::NEG_INFINITY;
                for j in j1..=j2 {
                    m = m.max(table[i * nl + j][l]);
                }
                colmax[i * n_g + l] = m;
            }
        }
        down.copy_from_slice(&colmax);
        for i in (0..anchor_scale).rev() {
            for l in 0..n_g {
                down[i * n_g + l] = down[i * n_g + l].max(down[(i + 1) * n_g + l]);
            }
        }
        up.copy_from_slice(&colmax);
        for i in anchor_scale + 1..nc {
            for l in 0..n_g {
                up[i * n_g + l] = up[i * n_g + l].max(up[(i - 1) * n_g + l]);
            }
        }
        for c in members {
            for l in 0..n_g {
                buf[l] = down[c[0] * n_g + l].max(up[c[1] * n_g + l]);
            }
            visit(&c, &buf);
        }
    }
}

/// Validated anchor and feasible candidate list shared by the rectangle
/// selections.
fn candidate_set(
    grid: &HyperGrid,
    eta_hat_index: (usize, usize),
    delta_prime: f64,
) -> Result<Vec<[usize; 4]>> {
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::ConfidenceDomain(delta_prime));
    }
    let (ic, jc) = eta_hat_index;
    if ic >= grid.n_scale() || jc >= grid.n_decay() {
        return Err(Error::GridIndex(ic, jc));
    }
    let target = (1.0 - delta_prime) * grid.total_mass();
    let candidates = feasible_candidates(grid, eta_hat_index, target);
    if candidates.is_empty() {
        return Err(Error::CoverageInfeasible {
            target: 1.0 - delta_prime,
        });
    }
    Ok(candidates)
}

fn credible_set_from(
    grid: &HyperGrid,
    c: [usize; 4],
    delta_prime: f64,
) -> CredibleSet {
    CredibleSet {
        rectangle: grid.rectangle(c[0], c[1], c[2], c[3]),
        index_bounds: (c[0], c[1], c[2], c[3]),
        mass: grid.mass(c[0], c[1], c[2], c[3]),
        delta_prime,
    }
}

fn select_credible_rectangle(
    grid: &HyperGrid,
    eta_hat_index: (usize, usize),
    delta_prime: f64,
    variance_table: Option<&[Array1<f64>]>,
) -> Result<CredibleSet> {
    let candidates = candidate_set(grid, eta_hat_index, delta_prime)?;
    let mut best: Option<(f64, f64, [usize; 4])> = None;
    match grid.family() {
        KernelFamily::Diagonal | KernelFamily::TunedCorrelated => {
            for c in &candidates {
                let obj = trace_objective(grid.family(), grid, *c)?;
                let area = rect_area(grid, *c);
                if best.is_none()
                    || better(obj, area, *c, best.unwrap().0, best.unwrap().1, best.unwrap().2)
                {
                    best = Some((obj, area, *c));
                }
            }
        }
        KernelFamily::StableSpline => {
            let table = variance_table.expect("caller supplies the table for SS");
            visit_candidates_with_rectmax(grid, table, &candidates, eta_hat_index.0, |c, rectmax| {
                let obj: f64 = rectmax.iter().sum();
                let area = rect_area(grid, *c);
                if best.is_none()
                    || better(obj, area, *c, best.unwrap().0, best.unwrap().1, best.unwrap().2)
                {
                    best = Some((obj, area, *c));
                }
            });
        }
    }
    let (_, _, c) = best.expect("candidate list is nonempty");
    Ok(credible_set_from(grid, c, delta_prime))
}

/// Smallest-band credible rectangle: among grid-aligned rectangles that
/// contain the anchor point and carry mass at least `1 - δ'`, the
/// minimizer of the band-size objective (compensated trace for DI/TC,
/// summed worst-case variances for SS).
pub fn credible_rectangle(
    data: &Dataset,
    grid: &HyperGrid,
    eta_hat_index: (usize, usize),
    delta_prime: f64,
) -> Result<CredibleSet> {
    let table = match grid.family() {
        KernelFamily::StableSpline => Some(grid_variance_table(data, grid)?),
        _ => None,
    };
    select_credible_rectangle(grid, eta_hat_index, delta_prime, table.as_deref())
}

/// Uniform worst-case posterior variances over a rectangle for the DI/TC
/// families: the diagonal of the posterior covariance computed with the
/// prior inflated to `(λ2/λ1)^κ K(c2, λ2)`, which dominates the prior at
/// every hyperparameter point in the rectangle.
pub fn uniform_sigma(
    data: &Dataset,
    family: KernelFamily,
    rect: &HyperRectangle,
) -> Result<Array1<f64>> {
    let kappa = ordering_exponent(family, rect.upper().decay())?;
    let scale = if kappa == 0.0 {
        1.0
    } else {
        (rect.upper().decay() / rect.lower().decay()).powf(kappa)
    };
    if !scale.is_finite() {
        return Err(Error::SingularGamma(rect.lower().decay()));
    }
    let factor = kernel_factor(family, rect.upper(), data.model_order()) * scale.sqrt();
    posterior_variance_diag(data, &factor)
}

/// Per-coefficient worst-case posterior variances over a rectangle for
/// any family: a 15×15 sub-grid in `(log scale, decay)` followed by a
/// per-coefficient coordinate search with step halving.
pub(crate) fn worst_case_variance_profile(
    data: &Dataset,
    family: KernelFamily,
    rect: &HyperRectangle,
) -> Result<Array1<f64>> {
    let all: Vec<usize> = (0..data.model_order()).collect();
    worst_case_variance_for(data, family, rect, &all)
}

/// Same as [`worst_case_variance_profile`], refining only the listed
/// coefficients; the others keep the sub-grid maxima.
fn worst_case_variance_for(
    data: &Dataset,
    family: KernelFamily,
    rect: &HyperRectangle,
    coefficients: &[usize],
) -> Result<Array1<f64>> {
    let n_g = data.model_order();
    let eval_diag = |log_scale: f64, decay: f64| -> Result<Array1<f64>> {
        let eta = Hyperparameters::new(log_scale.exp(), decay)?;
        let factor = kernel_factor(family, eta, n_g);
        posterior_variance_diag(data, &factor)
    };

    let x_lo = rect.lower().scale().ln();
    let x_hi = rect.upper().scale().ln();
    let y_lo = rect.lower().decay();
    let y_hi = rect.upper().decay();
    let xs = if x_hi > x_lo {
        linspace(x_lo, x_hi, 15)
    } else {
        vec![x_lo]
    };
    let ys = if y_hi > y_lo {
        linspace(y_lo, y_hi, 15)
    } else {
        vec![y_lo]
    };

    let mut best_val = Array1::<f64>::from_elem(n_g, f64::NEG_INFINITY);
    let mut best_at = vec![(xs[0], ys[0]); n_g];
    for &x in &xs {
        for &y in &ys {
            let diag = eval_diag(x, y)?;
            for l in 0..n_g {
                if diag[l] > best_val[l] {
                    best_val[l] = diag[l];
                    best_at[l] = (x, y);
                }
            }
        }
    }

    for l in coefficients {
        let l = *l;
        let refined = refine_coordinate_max(
            |x, y| eval_diag(x, y).map(|d| d[l]),
            best_at[l],
            best_val[l],
            (x_lo, x_hi),
            (y_lo, y_hi),
        )?;
        best_val[l] = best_val[l].max(refined);
    }
    Ok(best_val)
}

/// Pattern search for a box-constrained maximum: move along coordinates,
/// halve the steps when nothing improves, stop at 1e-4 of the box size
/// or sixty iterations.
fn refine_coordinate_max<F: FnMut(f64, f64) -> Result<f64>>(
    mut objective: F,
    start: (f64, f64),
    start_value: f64,
    x_bounds: (f64, f64),
    y_bounds: (f64, f64),
) -> Result<f64> {
    let (mut x, mut y) = start;
    let mut value = start_value;
    let x_range = x_bounds.1 - x_bounds.0;
    let y_range = y_bounds.1 - y_bounds.0;
    let mut hx = x_range / 14.0;
    let mut hy = y_range / 14.0;
    let min_hx = 1e-4 * x_range;
    let min_hy = 1e-4 * y_range;
    for _ in 0..60 {
        if hx <= min_hx && hy <= min_hy {
            break;
        }
        let mut moved = false;
        let mut trials: Vec<(f64, f64)> = Vec::with_capacity(4);
        if hx > 0.0 {
            trials.push(((x + hx).min(x_bounds.1), y));
            trials.push(((x - hx).max(x_bounds.0), y));
        }
        if hy > 0.0 {
            trials.push((x, (y + hy).min(y_bounds.1)));
            trials.push((x, (y - hy).max(y_bounds.0)));
        }
        for (tx, ty) in trials {
            if tx == x && ty == y {
                continue;
            }
            let v = objective(tx, ty)?;
            if v > value {
                value = v;
                x = tx;
                y = ty;
                moved = true;
            }
        }
        if !moved {
            hx *= 0.5;
            hy *= 0.5;
        }
    }
    Ok(value)
}

/// Worst-case posterior variance of coefficient `l` over a rectangle:
/// a 15×15 sub-grid maximization in `(log scale, decay)` followed by a
/// coordinate search with step halving.
pub fn elementwise_sigma(
    data: &Dataset,
    family: KernelFamily,
    rect: &HyperRectangle,
    l: usize,
) -> Result<f64> {
    Ok(worst_case_variance_profile(data, family, rect)?[l])
}

/// Per-coefficient minimax worst-case variances: for every coefficient,
/// the feasible rectangle minimizing its worst-case posterior variance.
///
/// The search ranks rectangles by the grid-sampled variance maxima and
/// then sharpens the winners with the sub-grid-plus-refinement
/// maximization, so each returned value is the refined worst case of a
/// feasible rectangle (never below the grid-sampled maximum, which keeps
/// it at or above the variance at the likelihood maximizer).
pub fn minimax_sigma_all(
    data: &Dataset,
    grid: &HyperGrid,
    eta_hat_index: (usize, usize),
    delta_prime: f64,
) -> Result<Array1<f64>> {
    let candidates = candidate_set(grid, eta_hat_index, delta_prime)?;
    let table = grid_variance_table(data, grid)?;
    minimax_from_table(data, grid, eta_hat_index, &candidates, &table)
}

fn minimax_from_table(
    data: &Dataset,
    grid: &HyperGrid,
    eta_hat_index: (usize, usize),
    candidates: &[[usize; 4]],
    table: &[Array1<f64>],
) -> Result<Array1<f64>> {
    let n_g = grid.model_order();
    let mut best: Vec<Option<(f64, f64, [usize; 4])>> = vec![None; n_g];
    visit_candidates_with_rectmax(grid, table, candidates, eta_hat_index.0, |c, rectmax| {
        let area = rect_area(grid, *c);
        for l in 0..n_g {
            let current = &mut best[l];
            if current.is_none()
                || better(
                    rectmax[l],
                    area,
                    *c,
                    current.unwrap().0,
                    current.unwrap().1,
                    current.unwrap().2,
                )
            {
                *current = Some((rectmax[l], area, *c));
            }
        }
    });

    // Group coefficients by winning rectangle and sharpen the inner
    // maximum once per distinct rectangle, refining only the
    // coefficients that rectangle won.
    let mut by_rect: BTreeMap<[usize; 4], Vec<usize>> = BTreeMap::new();
    for (l, entry) in best.iter().enumerate() {
        let (_, _, c) = entry.expect("feasible candidates exist");
        by_rect.entry(c).or_default().push(l);
    }
    let mut result = Array1::<f64>::zeros(n_g);
    for (c, ls) in by_rect {
        let rect = grid.rectangle(c[0], c[1], c[2], c[3]);
        let profile = worst_case_variance_for(data, grid.family(), &rect, &ls)?;
        for l in ls {
            let coarse = best[l].unwrap().0;
            result[l] = profile[l].max(coarse);
        }
    }
    Ok(result)
}

/// Minimax worst-case variance of a single coefficient; see
/// [`minimax_sigma_all`].
pub fn minimax_sigma(
    data: &Dataset,
    grid: &HyperGrid,
    eta_hat_index: (usize, usize),
    delta_prime: f64,
    l: usize,
) -> Result<f64> {
    Ok(minimax_sigma_all(data, grid, eta_hat_index, delta_prime)?[l])
}

/// Least-squares band: `b_l = μ_δ sqrt(Σ_ls[l,l])`.
pub fn ls_band(model: &LeastSquaresModel, delta: f64) -> Result<ErrorBand> {
    let mu = gaussian_quantile(delta)?;
    let n = model.covariance().nrows();
    let half_widths = Array1::from_shape_fn(n, |l| mu * model.covariance()[[l, l]].max(0.0).sqrt());
    Ok(ErrorBand {
        half_widths,
        method: BandMethod::LeastSquares,
        delta,
        delta_prime: None,
        scaling: None,
    })
}

/// Posterior band at fixed hyperparameters: `b_l = μ_δ sqrt(Σ[l,l])`.
/// Valid only when the prior (kernel and hyperparameters) is exact.
pub fn vanilla_band(model: &PosteriorModel, delta: f64) -> Result<ErrorBand> {
    let mu = gaussian_quantile(delta)?;
    let n = model.covariance().nrows();
    let half_widths = Array1::from_shape_fn(n, |l| mu * model.covariance()[[l, l]].max(0.0).sqrt());
    Ok(ErrorBand {
        half_widths,
        method: BandMethod::Vanilla,
        delta,
        delta_prime: None,
        scaling: None,
    })
}

/// Robust band together with the quantities it was built from.
#[derive(Debug, Clone)]
pub struct RobustBandResult {
    pub band: ErrorBand,
    pub eta_hat: Hyperparameters,
    pub eta_hat_index: (usize, usize),
    pub credible: CredibleSet,
}

/// Robust band from scratch: builds the hyperparameter posterior on
/// `spec` with a flat prior and delegates to [`robust_band_with_grid`].
pub fn robust_band(
    data: &Dataset,
    family: KernelFamily,
    delta: f64,
    delta_prime: f64,
    scaling: Scaling,
    spec: &HyperGridSpec,
) -> Result<RobustBandResult> {
    let grid = build_hyperposterior(data, family, spec, &Hyperprior::Flat)?;
    robust_band_with_grid(data, &grid, delta, delta_prime, scaling)
}

/// Robust band on an existing hyperparameter posterior.
///
/// The half-widths are `μ̄ σ_l` with `σ_l` the worst-case posterior
/// standard deviation over the credible rectangle (closed form for
/// DI/TC, per-coefficient minimax search for SS) and `μ̄` either the
/// plain Gaussian quantile or, in theoretical scaling, the quantile plus
/// `2 ‖y‖_S / σ`.
pub fn robust_band_with_grid(
    data: &Dataset,
    grid: &HyperGrid,
    delta: f64,
    delta_prime: f64,
    scaling: Scaling,
) -> Result<RobustBandResult> {
    let family = grid.family();
    let eta_hat_index = grid.likelihood_maximizer_index();
    let eta_hat = grid.point(eta_hat_index.0, eta_hat_index.1);

    let (credible, variances) = match family {
        KernelFamily::Diagonal | KernelFamily::TunedCorrelated => {
            let credible = select_credible_rectangle(grid, eta_hat_index, delta_prime, None)?;
            let variances = uniform_sigma(data, family, &credible.rectangle())?;
            (credible, variances)
        }
        KernelFamily::StableSpline => {
            // One variance table drives both the rectangle report and
            // the per-coefficient minimax.
            let candidates = candidate_set(grid, eta_hat_index, delta_prime)?;
            let table = grid_variance_table(data, grid)?;
            let credible =
                select_credible_rectangle(grid, eta_hat_index, delta_prime, Some(&table))?;
            let variances =
                minimax_from_table(data, grid, eta_hat_index, &candidates, &table)?;
            (credible, variances)
        }
    };

    let mu = gaussian_quantile(delta)?;
    let mu_bar = match scaling {
        Scaling::Practical => mu,
        Scaling::Theoretical => {
            let energy = match family {
                KernelFamily::Diagonal | KernelFamily::TunedCorrelated => {
                    // Tightened weighting: the worst-case posterior over
                    // the credible rectangle instead of the raw
                    // projector onto the regressor range.
                    let rect = credible.rectangle();
                    let kappa = ordering_exponent(family, rect.upper().decay())?;
                    let scale = if kappa == 0.0 {
                        1.0
                    } else {
                        (rect.upper().decay() / rect.lower().decay()).powf(kappa)
                    };
                    let factor =
                        kernel_factor(family, rect.upper(), data.model_order()) * scale.sqrt();
                    weighted_output_energy(data, &factor)?
                }
                KernelFamily::StableSpline => {
                    // ‖y‖² in the projector onto the regressor range.
                    let l = linalg::cholesky(data.gram())?;
                    let z = linalg::cholesky_solve(&l, data.regressor_t_outputs());
                    data.regressor_t_outputs().dot(&z)
                }
            };
            mu + 2.0 * energy.max(0.0).sqrt() / data.noise_variance().sqrt()
        }
    };

    let half_widths = variances.mapv(|v| mu_bar * v.max(0.0).sqrt());
    Ok(RobustBandResult {
        band: ErrorBand {
            half_widths,
            method: BandMethod::Robust,
            delta,
            delta_prime: Some(delta_prime),
            scaling: Some(scaling),
        },
        eta_hat,
        eta_hat_index,
        credible,
    })
}

/// Self-check of the band-derivation inequality chain at one
/// hyperparameter point: for every coefficient,
/// `ĝ_l² <= Σ[l,l] ĝᵀΣ⁻¹ĝ <= (Σ[l,l]/σ²) ‖y‖²_S`,
/// where `S` projects onto the regressor range.
pub fn cauchy_schwarz_check(
    data: &Dataset,
    family: KernelFamily,
    eta: Hyperparameters,
) -> Result<bool> {
    let kernel = crate::kernels::build_kernel(family, eta, data.model_order());
    let post = crate::estimation::regularized_estimate(data, &kernel)?;
    let s2 = data.noise_variance();
    let factor = kernel.factor();
    // σ² ĝᵀ Σ⁻¹ ĝ, computed without inverting Σ.
    let energy_post = weighted_output_energy(data, &factor)?;
    let l = linalg::cholesky(data.gram())?;
    let z = linalg::cholesky_solve(&l, data.regressor_t_outputs());
    let energy_hat = data.regressor_t_outputs().dot(&z);

    let slack = 1e-9;
    if energy_post > energy_hat * (1.0 + slack) + 1e-300 {
        return Ok(false);
    }
    for l in 0..data.model_order() {
        let lhs = post.mean()[l] * post.mean()[l];
        let mid = post.covariance()[[l, l]] * energy_post / s2;
        let rhs = post.covariance()[[l, l]] * energy_hat / s2;
        if lhs > mid * (1.0 + slack) + 1e-300 || mid > rhs * (1.0 + slack) + 1e-300 {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{least_squares, regularized_estimate};
    use crate::kernels::build_kernel;
    use crate::linsys::{g1, gaussian_input, Dataset};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn eta(c: f64, lam: f64) -> Hyperparameters {
        Hyperparameters::new(c, lam).unwrap()
    }

    #[test]
    fn quantile_matches_reference_values() {
        // Frozen from the inverse error function at high precision.
        assert_abs_diff_eq!(
            gaussian_quantile(0.1).unwrap(),
            1.6448536269514722,
            epsilon = 1e-8
        );
        assert_abs_diff_eq!(
            gaussian_quantile(0.05).unwrap(),
            1.959963984540054,
            epsilon = 1e-8
        );
        // δ = 2(1 - Φ(1)) makes the quantile exactly one.
        assert_abs_diff_eq!(
            gaussian_quantile(0.31731050786291415).unwrap(),
            1.0,
            epsilon = 1e-8
        );
        // The printed four-digit value of the same δ.
        assert_abs_diff_eq!(gaussian_quantile(0.3173).unwrap(), 1.0, epsilon = 1e-4);
        // δ → 1 collapses the band to the median.
        assert!(gaussian_quantile(0.999_999_999).unwrap() < 1e-6);
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        assert!(gaussian_quantile(0.0).is_err());
        assert!(gaussian_quantile(1.0).is_err());
        assert!(gaussian_quantile(-0.2).is_err());
        assert!(gaussian_quantile(1.7).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(-1.0), 0.15865525393145707, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(4.0), 0.9999683287581669, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(-6.0), 9.865876450376946e-10, epsilon = 1e-20);
    }

    fn flat_likelihood_dataset(n: usize, n_g: usize) -> Dataset {
        // Zero inputs make the marginal likelihood independent of the
        // hyperparameters, so grid masses reduce to the prior weights.
        Dataset::from_records(vec![0.0; n], vec![1.0; n], n_g, 0.5).unwrap()
    }

    /// Prior table that cancels the Jacobian and cell sizes, so every
    /// cell of a flat-likelihood grid gets exactly equal mass.
    fn equalizing_prior(spec: &HyperGridSpec) -> Hyperprior {
        let scales = spec.scale_points();
        let decays = spec.decay_points();
        let lnc: Vec<f64> = scales.iter().map(|c| c.ln()).collect();
        let wc = super::midpoint_widths(&lnc);
        let wl = super::midpoint_widths(&decays);
        let table = Array2::from_shape_fn((scales.len(), decays.len()), |(i, j)| {
            1.0 / (scales[i] * wc[i] * wl[j])
        });
        Hyperprior::Tabulated(table)
    }

    #[test]
    fn single_cell_grid_has_unit_weight() {
        let data = flat_likelihood_dataset(6, 2);
        let spec = HyperGridSpec::new(1.0, 1.0, 1, 0.5, 0.5, 1).unwrap();
        let grid =
            build_hyperposterior(&data, KernelFamily::TunedCorrelated, &spec, &Hyperprior::Flat)
                .unwrap();
        assert_abs_diff_eq!(grid.weights()[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(grid.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_equal_cells_split_mass() {
        let data = flat_likelihood_dataset(6, 2);
        let spec = HyperGridSpec::new(2.0, 2.0, 1, 0.3, 0.7, 2).unwrap();
        let grid =
            build_hyperposterior(&data, KernelFamily::TunedCorrelated, &spec, &Hyperprior::Flat)
                .unwrap();
        assert_abs_diff_eq!(grid.weights()[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.weights()[[0, 1]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn normalization_survives_extreme_log_likelihoods() {
        // Tiny noise variance drives the log-likelihoods to huge
        // magnitudes; the stabilized weights must still normalize.
        let u = gaussian_input(40, 3);
        let data = Dataset::simulate(&g1(), &u, 10, 1e-9, 4).unwrap();
        let spec = HyperGridSpec::new(1e-3, 1e3, 8, 0.05, 0.95, 8).unwrap();
        let grid =
            build_hyperposterior(&data, KernelFamily::TunedCorrelated, &spec, &Hyperprior::Flat)
                .unwrap();
        assert!((grid.total_mass() - 1.0).abs() < 1e-9);
        assert!(grid.weights().iter().all(|w| w.is_finite() && *w >= 0.0));
    }

    #[test]
    fn dominant_prior_cell_yields_single_cell_rectangle() {
        let data = flat_likelihood_dataset(8, 2);
        let spec = HyperGridSpec::new(0.5, 8.0, 3, 0.2, 0.8, 3).unwrap();
        let mut table = Array2::from_elem((3, 3), 1e-12);
        table[[0, 0]] = 1.0;
        let grid = build_hyperposterior(
            &data,
            KernelFamily::TunedCorrelated,
            &spec,
            &Hyperprior::Tabulated(table),
        )
        .unwrap();
        // The flat likelihood ties everywhere, so the maximizer is the
        // first grid point, which is also where the mass sits.
        let anchor = grid.likelihood_maximizer_index();
        assert_eq!(anchor, (0, 0));
        let set = credible_rectangle(&data, &grid, anchor, 0.1).unwrap();
        assert_eq!(set.index_bounds(), (0, 0, 0, 0));
        assert!(set.mass() >= 0.9);
    }

    #[test]
    fn uniform_grid_rectangle_matches_brute_force() {
        // Exactly uniform cell masses on a 4×4 grid; the anchor sits at
        // an interior point and half the mass is required.
        let data = flat_likelihood_dataset(8, 3);
        let spec = HyperGridSpec::new(0.5, 4.0, 4, 0.2, 0.8, 4).unwrap();
        let prior = equalizing_prior(&spec);
        let grid =
            build_hyperposterior(&data, KernelFamily::TunedCorrelated, &spec, &prior).unwrap();
        for w in grid.weights() {
            assert_abs_diff_eq!(*w, 1.0 / 16.0, epsilon = 1e-12);
        }
        let anchor = (1usize, 1usize);
        let delta_prime = 0.5;
        let set = credible_rectangle(&data, &grid, anchor, delta_prime).unwrap();

        // Independent brute force over all 100 index rectangles around
        // the anchor, reusing nothing from the implementation path.
        let mut best: Option<(f64, f64, [usize; 4])> = None;
        let n_g = grid.model_order();
        for i1 in 0..=1 {
            for i2 in 1..4 {
                for j1 in 0..=1 {
                    for j2 in 1..4 {
                        let cells = (i2 - i1 + 1) * (j2 - j1 + 1);
                        let mass = cells as f64 / 16.0;
                        if mass < 0.5 - 1e-12 {
                            continue;
                        }
                        let lam1 = grid.decay_points()[j1];
                        let lam2 = grid.decay_points()[j2];
                        let kappa = -1.0 / lam2.ln();
                        let trace: f64 =
                            (0..n_g).map(|l| lam2.powi(l as i32)).sum::<f64>()
                                * grid.scale_points()[i2];
                        let obj = (lam2 / lam1).powf(kappa) * trace;
                        let area = (grid.scale_points()[i2].ln()
                            - grid.scale_points()[i1].ln())
                            * (lam2 - lam1);
                        let corners = [i1, i2, j1, j2];
                        let replace = match best {
                            None => true,
                            Some((bo, ba, bc)) => super::better(obj, area, corners, bo, ba, bc),
                        };
                        if replace {
                            best = Some((obj, area, corners));
                        }
                    }
                }
            }
        }
        let (_, _, expect) = best.unwrap();
        assert_eq!(
            set.index_bounds(),
            (expect[0], expect[1], expect[2], expect[3])
        );
        let (i1, i2, j1, j2) = set.index_bounds();
        assert!((i2 - i1 + 1) * (j2 - j1 + 1) >= 8, "needs at least 8 cells");
    }

    fn g1_dataset(n: usize, n_g: usize, s2: f64, seed: u64) -> Dataset {
        let u = gaussian_input(n, seed);
        Dataset::simulate(&g1(), &u, n_g, s2, seed ^ 0x5bf0_3635).unwrap()
    }

    #[test]
    fn credible_mass_meets_target_on_simulated_data() {
        let data = g1_dataset(120, 25, 0.1, 7);
        let spec = HyperGridSpec::new(1e-3, 1e3, 15, 0.05, 0.95, 15).unwrap();
        let grid =
            build_hyperposterior(&data, KernelFamily::TunedCorrelated, &spec, &Hyperprior::Flat)
                .unwrap();
        let anchor = grid.likelihood_maximizer_index();
        let set = credible_rectangle(&data, &grid, anchor, 0.1).unwrap();
        assert!(set.mass() >= 0.9 * grid.total_mass() - 1e-12);
        // Direct re-integration agrees with the prefix-sum mass.
        let (i1, i2, j1, j2) = set.index_bounds();
        let mut direct = 0.0;
        for i in i1..=i2 {
            for j in j1..=j2 {
                direct += grid.weights()[[i, j]];
            }
        }
        assert_abs_diff_eq!(direct, set.mass(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_sigma_degenerate_rectangle_is_posterior_diagonal() {
        let data = g1_dataset(60, 10, 0.2, 11);
        let point = eta(1.7, 0.62);
        let rect = HyperRectangle::new(point, point).unwrap();
        let sigma = uniform_sigma(&data, KernelFamily::TunedCorrelated, &rect).unwrap();
        let kernel = build_kernel(KernelFamily::TunedCorrelated, point, 10);
        let post = regularized_estimate(&data, &kernel).unwrap();
        for l in 0..10 {
            assert_abs_diff_eq!(
                sigma[l],
                post.covariance()[[l, l]],
                epsilon = 1e-12 * post.covariance()[[l, l]]
            );
        }
    }

    #[test]
    fn uniform_sigma_rejects_stable_spline() {
        let data = g1_dataset(30, 5, 0.2, 3);
        let rect = HyperRectangle::new(eta(0.5, 0.3), eta(2.0, 0.8)).unwrap();
        assert!(matches!(
            uniform_sigma(&data, KernelFamily::StableSpline, &rect),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn uniform_sigma_grows_with_the_rectangle() {
        let data = g1_dataset(60, 10, 0.2, 13);
        let lower = eta(0.4, 0.35);
        let uppers = [eta(1.5, 0.5), eta(1.5, 0.7), eta(1.5, 0.9), eta(4.0, 0.9)];
        let mut prev: Option<Array1<f64>> = None;
        for upper in uppers {
            let rect = HyperRectangle::new(lower, upper).unwrap();
            let sigma = uniform_sigma(&data, KernelFamily::TunedCorrelated, &rect).unwrap();
            if let Some(p) = &prev {
                for l in 0..10 {
                    assert!(
                        sigma[l] >= p[l] * (1.0 - 1e-12),
                        "coefficient {l} shrank: {} -> {}",
                        p[l],
                        sigma[l]
                    );
                }
            }
            prev = Some(sigma);
        }
    }

    #[test]
    fn uniform_sigma_dominates_sampled_variances() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        for family in [KernelFamily::Diagonal, KernelFamily::TunedCorrelated] {
            let data = g1_dataset(50, 8, 0.3, 29);
            let rect = HyperRectangle::new(eta(0.3, 0.25), eta(3.0, 0.85)).unwrap();
            let bound = uniform_sigma(&data, family, &rect).unwrap();
            for _ in 0..100 {
                let c = rng.gen_range(0.3..3.0);
                let lam = rng.gen_range(0.25..0.85);
                let kernel = build_kernel(family, eta(c, lam), 8);
                let post = regularized_estimate(&data, &kernel).unwrap();
                for l in 0..8 {
                    assert!(
                        post.covariance()[[l, l]] <= bound[l] * (1.0 + 1e-10),
                        "family={family} l={l} at (c={c}, λ={lam})"
                    );
                }
            }
        }
    }

    #[test]
    fn elementwise_sigma_degenerate_rectangle() {
        let data = g1_dataset(40, 6, 0.2, 31);
        let point = eta(0.9, 0.55);
        let rect = HyperRectangle::new(point, point).unwrap();
        let kernel = build_kernel(KernelFamily::StableSpline, point, 6);
        let post = regularized_estimate(&data, &kernel).unwrap();
        for l in 0..6 {
            let s = elementwise_sigma(&data, KernelFamily::StableSpline, &rect, l).unwrap();
            assert_abs_diff_eq!(
                s,
                post.covariance()[[l, l]],
                epsilon = 1e-10 * post.covariance()[[l, l]]
            );
        }
    }

    #[test]
    fn elementwise_sigma_never_exceeds_uniform_bound() {
        let data = g1_dataset(50, 8, 0.25, 37);
        let rect = HyperRectangle::new(eta(0.4, 0.3), eta(2.5, 0.8)).unwrap();
        for family in [KernelFamily::Diagonal, KernelFamily::TunedCorrelated] {
            let uniform = uniform_sigma(&data, family, &rect).unwrap();
            let profile = worst_case_variance_profile(&data, family, &rect).unwrap();
            for l in 0..8 {
                assert!(
                    profile[l] <= uniform[l] * 1.01,
                    "family={family} l={l}: {} vs {}",
                    profile[l],
                    uniform[l]
                );
            }
        }
    }

    #[test]
    fn elementwise_sigma_dominates_rectangle_members() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(43);
        let data = g1_dataset(40, 6, 0.3, 41);
        let rect = HyperRectangle::new(eta(0.5, 0.3), eta(2.0, 0.8)).unwrap();
        let profile = worst_case_variance_profile(&data, KernelFamily::StableSpline, &rect).unwrap();
        for _ in 0..60 {
            let c = rng.gen_range(0.5..2.0);
            let lam = rng.gen_range(0.3..0.8);
            let kernel = build_kernel(KernelFamily::StableSpline, eta(c, lam), 6);
            let post = regularized_estimate(&data, &kernel).unwrap();
            for l in 0..6 {
                assert!(
                    post.covariance()[[l, l]] <= profile[l] * (1.0 + 1e-6),
                    "l={l} at (c={c}, λ={lam})"
                );
            }
        }
    }

    #[test]
    fn elementwise_sigma_grows_with_rectangle() {
        let data = g1_dataset(40, 6, 0.3, 47);
        let lower = eta(0.5, 0.3);
        let small = HyperRectangle::new(lower, eta(1.5, 0.6)).unwrap();
        let large = HyperRectangle::new(lower, eta(3.0, 0.9)).unwrap();
        let p_small =
            worst_case_variance_profile(&data, KernelFamily::StableSpline, &small).unwrap();
        let p_large =
            worst_case_variance_profile(&data, KernelFamily::StableSpline, &large).unwrap();
        for l in 0..6 {
            assert!(
                p_large[l] >= p_small[l] * (1.0 - 1e-6),
                "l={l}: {} -> {}",
                p_small[l],
                p_large[l]
            );
        }
    }

    #[test]
    fn minimax_single_feasible_rectangle() {
        // One-cell grid: the only feasible rectangle is the cell itself,
        // so the minimax values equal the posterior variances there.
        let data = g1_dataset(40, 6, 0.3, 53);
        let spec = HyperGridSpec::new(1.2, 1.2, 1, 0.6, 0.6, 1).unwrap();
        let grid =
            build_hyperposterior(&data, KernelFamily::StableSpline, &spec, &Hyperprior::Flat)
                .unwrap();
        let sigma = minimax_sigma_all(&data, &grid, (0, 0), 0.1).unwrap();
        let kernel = build_kernel(KernelFamily::StableSpline, eta(1.2, 0.6), 6);
        let post = regularized_estimate(&data, &kernel).unwrap();
        for l in 0..6 {
            assert_abs_diff_eq!(
                sigma[l],
                post.covariance()[[l, l]],
                epsilon = 1e-10 * post.covariance()[[l, l]]
            );
        }
    }

    #[test]
    fn minimax_prefers_dominating_candidate() {
        // Two decay cells, the anchor pinned to the first; a heavy prior
        // on the anchor cell makes both the single cell and the pair
        // feasible. The single cell has pointwise smaller worst case, so
        // it must win for every coefficient.
        let data = g1_dataset(40, 6, 0.3, 59);
        let spec = HyperGridSpec::new(1.0, 1.0, 1, 0.4, 0.8, 2).unwrap();
        // Prior ratio large enough that no likelihood difference on this
        // small record can move the mass off the anchor cell.
        let mut table = Array2::from_elem((1, 2), 1e-300);
        table[[0, 0]] = 1.0;
        let grid = build_hyperposterior(
            &data,
            KernelFamily::StableSpline,
            &spec,
            &Hyperprior::Tabulated(table),
        )
        .unwrap();
        let anchor = (0, 0);
        let sigma = minimax_sigma_all(&data, &grid, anchor, 0.1).unwrap();
        let single_cell = HyperRectangle::new(grid.point(0, 0), grid.point(0, 0)).unwrap();
        let expect =
            worst_case_variance_profile(&data, KernelFamily::StableSpline, &single_cell).unwrap();
        for l in 0..6 {
            assert_abs_diff_eq!(sigma[l], expect[l], epsilon = 1e-10 * expect[l]);
        }
        assert_abs_diff_eq!(
            minimax_sigma(&data, &grid, anchor, 0.1, 2).unwrap(),
            sigma[2],
            epsilon = 0.0
        );
    }

    #[test]
    fn ls_band_examples() {
        // Scalar regressor [1]: unit covariance, band is the quantile.
        let data = Dataset::from_records(vec![1.0], vec![0.3], 1, 1.0).unwrap();
        let ls = least_squares(&data).unwrap();
        let band = ls_band(&ls, 0.1).unwrap();
        assert_abs_diff_eq!(band.half_widths()[0], 1.6448536269514722, epsilon = 1e-8);

        // Scalar regressor [2]: covariance 1/4, band is half the quantile.
        let data = Dataset::from_records(vec![2.0], vec![0.3], 1, 1.0).unwrap();
        let ls = least_squares(&data).unwrap();
        let band = ls_band(&ls, 0.1).unwrap();
        assert_abs_diff_eq!(
            band.half_widths()[0],
            1.6448536269514722 * 0.5,
            epsilon = 1e-8
        );

        // Zero noise variance collapses the band.
        let data = Dataset::from_records(vec![1.0], vec![0.3], 1, 0.0).unwrap();
        let ls = least_squares(&data).unwrap();
        let band = ls_band(&ls, 0.1).unwrap();
        assert_eq!(band.half_widths()[0], 0.0);
    }

    #[test]
    fn vanilla_band_scalar_case() {
        let data = Dataset::from_records(vec![1.0], vec![1.0], 1, 1.0).unwrap();
        let kernel = build_kernel(KernelFamily::Diagonal, eta(1.0, 1.0), 1);
        let post = regularized_estimate(&data, &kernel).unwrap();
        let band = vanilla_band(&post, 0.1).unwrap();
        assert_abs_diff_eq!(
            band.half_widths()[0],
            1.6448536269514722 * 0.5f64.sqrt(),
            epsilon = 1e-8
        );

        // Near-flat prior pushes the posterior variance to the
        // least-squares value of one.
        let kernel = build_kernel(KernelFamily::Diagonal, eta(1e9, 1.0), 1);
        let post = regularized_estimate(&data, &kernel).unwrap();
        let band = vanilla_band(&post, 0.1).unwrap();
        assert_abs_diff_eq!(band.half_widths()[0], 1.6448536269514722, epsilon = 1e-6);
    }

    #[test]
    fn robust_band_on_single_cell_grid_collapses_to_vanilla() {
        let data = g1_dataset(60, 10, 0.2, 61);
        let spec = HyperGridSpec::new(1.5, 1.5, 1, 0.7, 0.7, 1).unwrap();
        let result = robust_band(
            &data,
            KernelFamily::TunedCorrelated,
            0.1,
            0.1,
            Scaling::Practical,
            &spec,
        )
        .unwrap();
        assert!(result.credible.rectangle().is_degenerate());
        let kernel = build_kernel(KernelFamily::TunedCorrelated, eta(1.5, 0.7), 10);
        let post = regularized_estimate(&data, &kernel).unwrap();
        let vanilla = vanilla_band(&post, 0.1).unwrap();
        for l in 0..10 {
            assert_abs_diff_eq!(
                result.band.half_widths()[l],
                vanilla.half_widths()[l],
                epsilon = 1e-10 * vanilla.half_widths()[l]
            );
        }
    }

    #[test]
    fn theoretical_band_is_wider_than_practical() {
        let data = g1_dataset(80, 12, 0.3, 67);
        let spec = HyperGridSpec::new(1e-2, 1e2, 8, 0.1, 0.9, 8).unwrap();
        for family in [KernelFamily::TunedCorrelated, KernelFamily::StableSpline] {
            let practical =
                robust_band(&data, family, 0.1, 0.1, Scaling::Practical, &spec).unwrap();
            let theoretical =
                robust_band(&data, family, 0.1, 0.1, Scaling::Theoretical, &spec).unwrap();
            for l in 0..12 {
                assert!(
                    theoretical.band.half_widths()[l] >= practical.band.half_widths()[l],
                    "family={family} l={l}"
                );
            }
        }
    }

    #[test]
    fn cauchy_schwarz_trivial_and_random_cases() {
        // Zero outputs: both sides vanish.
        let zero = Dataset::from_records(vec![1.0, 0.2, -0.3], vec![0.0; 3], 2, 0.5).unwrap();
        assert!(
            cauchy_schwarz_check(&zero, KernelFamily::TunedCorrelated, eta(1.0, 0.6)).unwrap()
        );

        let mut rng = Xoshiro256PlusPlus::seed_from_u64(71);
        for seed in 0..50u64 {
            let n = rng.gen_range(10..40);
            let n_g = rng.gen_range(2..8);
            let family = match seed % 3 {
                0 => KernelFamily::Diagonal,
                1 => KernelFamily::TunedCorrelated,
                _ => KernelFamily::StableSpline,
            };
            let data = g1_dataset(n, n_g, rng.gen_range(0.05..0.8), 100 + seed);
            let e = eta(rng.gen_range(0.1..5.0), rng.gen_range(0.1..0.95));
            assert!(
                cauchy_schwarz_check(&data, family, e).unwrap(),
                "seed={seed} family={family}"
            );
        }
    }

    #[test]
    fn posterior_norm_identity_holds() {
        // σ² ĝᵀ Σ⁻¹ ĝ computed by the reduced energy matches the direct
        // solve against the posterior covariance.
        let data = g1_dataset(50, 6, 0.4, 73);
        let kernel = build_kernel(KernelFamily::TunedCorrelated, eta(1.3, 0.7), 6);
        let post = regularized_estimate(&data, &kernel).unwrap();
        let energy = weighted_output_energy(&data, &kernel.factor()).unwrap();
        let (l, _) = linalg::cholesky_jitter(post.covariance(), 1e-13).unwrap();
        let x = linalg::cholesky_solve(&l, post.mean());
        let direct = post.mean().dot(&x) * data.noise_variance();
        assert_abs_diff_eq!(energy, direct, epsilon = 1e-6 * direct.abs().max(1e-12));
    }

    #[test]
    fn error_decomposition_triangle_inequality() {
        // Arithmetic sanity harness for the two-term error split.
        let n_g = 8;
        let truth_eta = eta(1.1, 0.66);
        let data = g1_dataset(70, n_g, 0.2, 79);
        let g_true = g1().impulse_response(n_g);
        let k_true = build_kernel(KernelFamily::TunedCorrelated, truth_eta, n_g);
        let k_est = build_kernel(KernelFamily::TunedCorrelated, eta(2.2, 0.5), n_g);
        let at_true = regularized_estimate(&data, &k_true).unwrap();
        let at_est = regularized_estimate(&data, &k_est).unwrap();
        for l in 0..n_g {
            let total = (at_est.mean()[l] - g_true.coefficients()[l]).abs();
            let split = (at_est.mean()[l] - at_true.mean()[l]).abs()
                + (at_true.mean()[l] - g_true.coefficients()[l]).abs();
            assert!(total <= split + 1e-14);
        }
    }

    #[test]
    fn far_corner_mass_stretches_rectangle_to_full_grid() {
        // All mass sits in the far corner while the flat likelihood pins
        // the anchor to the opposite one; the only way to reach the
        // target is the full-grid rectangle. Cell masses normalize over
        // the grid, so some rectangle is always feasible and the
        // selection can only fail on a malformed confidence parameter.
        let data = flat_likelihood_dataset(8, 2);
        let spec = HyperGridSpec::new(0.5, 4.0, 3, 0.2, 0.8, 3).unwrap();
        let mut table = Array2::from_elem((3, 3), 1e-300);
        table[[2, 2]] = 1.0;
        let grid = build_hyperposterior(
            &data,
            KernelFamily::TunedCorrelated,
            &spec,
            &Hyperprior::Tabulated(table),
        )
        .unwrap();
        let set = credible_rectangle(&data, &grid, (0, 0), 0.1).unwrap();
        assert_eq!(set.index_bounds(), (0, 2, 0, 2));
        assert!(matches!(
            credible_rectangle(&data, &grid, (0, 0), 1.2),
            Err(Error::ConfidenceDomain(_))
        ));
    }
}

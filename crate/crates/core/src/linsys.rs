//! Discrete-time test systems, data simulation, and the FIR regression
//! problem.
//!
//! Conventions used throughout the crate: time indices are 1-based
//! (`u_1..u_N`), impulse-response lags are 0-based (`g_0..g_{n_g-1}`), and
//! the system is at rest before data collection (`u_t = 0` for `t <= 0`).

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Rational transfer function in ascending powers of the delay operator.
///
/// `numerator[k]` and `denominator[k]` are the coefficients of the k-th
/// delay; the denominator is monic and must have all roots strictly
/// inside the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl TransferFunction {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() || denominator.is_empty() {
            return Err(Error::EmptyPolynomial);
        }
        if denominator[0] != 1.0 {
            return Err(Error::NotMonic(denominator[0]));
        }
        let tf = Self {
            numerator,
            denominator,
        };
        for pole in tf.poles() {
            if pole.norm() >= 1.0 {
                return Err(Error::UnstableSystem(pole.norm()));
            }
        }
        Ok(tf)
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    /// Poles of the system: roots of the denominator rewritten as a monic
    /// polynomial in the forward shift.
    pub fn poles(&self) -> Vec<Complex64> {
        polynomial_roots(&self.denominator)
    }

    /// Leading coefficients of the power-series expansion in the delay
    /// operator, obtained by long division against the denominator.
    pub fn impulse_response(&self, n_g: usize) -> ImpulseResponse {
        assert!(n_g >= 1, "impulse response length must be at least 1");
        let mut g = vec![0.0f64; n_g];
        for l in 0..n_g {
            let mut v = *self.numerator.get(l).unwrap_or(&0.0);
            let kmax = l.min(self.denominator.len() - 1);
            for k in 1..=kmax {
                v -= self.denominator[k] * g[l - k];
            }
            g[l] = v;
        }
        ImpulseResponse { coefficients: g }
    }
}

/// Smooth second-order test system: two real poles at 0.9, scaled to
/// unit root-sum-square impulse response.
pub fn g1() -> TransferFunction {
    TransferFunction::new(vec![0.0, 0.0, 0.0616], vec![1.0, -1.8, 0.81]).expect("g1 is stable")
}

/// Lightly damped second-order test system: complex pole pair of
/// magnitude 0.9 with real part 0.5, scaled to unit root-sum-square
/// impulse response.
pub fn g2() -> TransferFunction {
    TransferFunction::new(vec![0.0, 0.0, 0.4888], vec![1.0, -1.0, 0.81]).expect("g2 is stable")
}

/// Truncated impulse response `g_0..g_{n_g-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    coefficients: Vec<f64>,
}

impl ImpulseResponse {
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Root of the sum of squared coefficients.
    pub fn h2_norm(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Input/output records together with the regression quantities derived
/// from them: the convolution regressor and its Gram products.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Array1<f64>,
    outputs: Array1<f64>,
    regressor: Array2<f64>,
    noise_variance: f64,
    // Gram products reused by every estimator and likelihood evaluation.
    gram: Array2<f64>,
    regressor_t_outputs: Array1<f64>,
    outputs_sq: f64,
}

impl Dataset {
    /// Wrap measured records. The regressor is assembled from the inputs;
    /// the sample count must not fall below the model order.
    pub fn from_records(
        inputs: Vec<f64>,
        outputs: Vec<f64>,
        n_g: usize,
        noise_variance: f64,
    ) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs vs {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if noise_variance < 0.0 {
            return Err(Error::NegativeNoiseVariance(noise_variance));
        }
        if n_g == 0 {
            return Err(Error::DimensionMismatch(
                "model order must be at least 1".into(),
            ));
        }
        if inputs.len() < n_g {
            return Err(Error::ShortDataset {
                n: inputs.len(),
                n_g,
            });
        }
        let u = Array1::from_vec(inputs);
        let y = Array1::from_vec(outputs);
        let phi = build_regressor(u.as_slice().unwrap(), n_g);
        let gram = phi.t().dot(&phi);
        let pty = phi.t().dot(&y);
        let ysq = y.dot(&y);
        Ok(Self {
            inputs: u,
            outputs: y,
            regressor: phi,
            noise_variance,
            gram,
            regressor_t_outputs: pty,
            outputs_sq: ysq,
        })
    }

    /// Simulate the system response to `inputs` with additive Gaussian
    /// noise of the given variance, truncating the impulse response at
    /// `n_g` taps so the FIR model is exact by construction.
    ///
    /// The same seed always reproduces the same record.
    pub fn simulate(
        tf: &TransferFunction,
        inputs: &[f64],
        n_g: usize,
        noise_variance: f64,
        seed: u64,
    ) -> Result<Self> {
        if noise_variance < 0.0 {
            return Err(Error::NegativeNoiseVariance(noise_variance));
        }
        let g = tf.impulse_response(n_g);
        let y = simulate_outputs(&g, inputs, noise_variance, seed);
        Self::from_records(inputs.to_vec(), y, n_g, noise_variance)
    }

    pub fn inputs(&self) -> &Array1<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &Array1<f64> {
        &self.outputs
    }

    pub fn regressor(&self) -> &Array2<f64> {
        &self.regressor
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn model_order(&self) -> usize {
        self.regressor.ncols()
    }

    /// `ΦᵀΦ`, cached at construction.
    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// `Φᵀy`, cached at construction.
    pub fn regressor_t_outputs(&self) -> &Array1<f64> {
        &self.regressor_t_outputs
    }

    /// `yᵀy`, cached at construction.
    pub fn outputs_sq(&self) -> f64 {
        self.outputs_sq
    }
}

/// Convolve the truncated impulse response with the input sequence and
/// add i.i.d. zero-mean Gaussian noise.
fn simulate_outputs(
    g: &ImpulseResponse,
    inputs: &[f64],
    noise_variance: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let sd = noise_variance.sqrt();
    let coeffs = g.coefficients();
    inputs
        .iter()
        .enumerate()
        .map(|(t, _)| {
            let mut y = 0.0;
            for (l, gl) in coeffs.iter().enumerate() {
                if l > t {
                    break;
                }
                y += gl * inputs[t - l];
            }
            let noise: f64 = rng.sample(StandardNormal);
            y + sd * noise
        })
        .collect()
}

/// N×n_g convolution regressor: row `t` (1-based time) holds
/// `u_{t}, u_{t-1}, ..., u_{t-n_g+1}` with zeros before the record starts.
pub fn build_regressor(inputs: &[f64], n_g: usize) -> Array2<f64> {
    let n = inputs.len();
    let mut phi = Array2::<f64>::zeros((n, n_g));
    for t in 0..n {
        for l in 0..n_g.min(t + 1) {
            phi[[t, l]] = inputs[t - l];
        }
    }
    phi
}

/// Standard-normal input sequence of length `n` for the given seed.
pub fn gaussian_input(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Roots of a monic polynomial given in ascending delay powers
/// `1 + a_1 q^{-1} + ... + a_m q^{-m}`, i.e. the roots of
/// `z^m + a_1 z^{m-1} + ... + a_m`.
///
/// Degrees one and two use closed forms (the quadratic with the stable
/// branch split), higher degrees the Durand-Kerner simultaneous
/// iteration.
pub fn polynomial_roots(ascending: &[f64]) -> Vec<Complex64> {
    let m = ascending.len() - 1;
    match m {
        0 => Vec::new(),
        1 => vec![Complex64::new(-ascending[1], 0.0)],
        2 => {
            let b = ascending[1];
            let c = ascending[2];
            let disc = b * b - 4.0 * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // Split so the larger-magnitude root is formed without
                // cancellation, the other from the product of roots.
                let q = -0.5 * (b + b.signum() * sq);
                if q == 0.0 {
                    vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)]
                } else {
                    vec![Complex64::new(q, 0.0), Complex64::new(c / q, 0.0)]
                }
            } else {
                let re = -0.5 * b;
                let im = 0.5 * (-disc).sqrt();
                vec![Complex64::new(re, im), Complex64::new(re, -im)]
            }
        }
        _ => durand_kerner(ascending),
    }
}

fn durand_kerner(ascending: &[f64]) -> Vec<Complex64> {
    let m = ascending.len() - 1;
    let eval = |z: Complex64| -> Complex64 {
        let mut p = Complex64::new(1.0, 0.0);
        for &a in &ascending[1..] {
            p = p * z + a;
        }
        p
    };
    let scale = ascending[1..]
        .iter()
        .fold(1.0f64, |acc, a| acc.max(a.abs()))
        .max(1.0);
    let start = Complex64::new(0.4, 0.9) * scale.powf(1.0 / m as f64);
    let mut roots: Vec<Complex64> = (0..m).map(|k| start.powu(k as u32 + 1)).collect();
    for _ in 0..200 {
        let mut shift = 0.0f64;
        for i in 0..m {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..m {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                continue;
            }
            let delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            shift = shift.max(delta.norm());
        }
        if shift <= 1e-14 * scale {
            break;
        }
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pure_delay_impulse() {
        let tf = TransferFunction::new(vec![0.0, 1.0], vec![1.0]).unwrap();
        assert_eq!(tf.impulse_response(3).coefficients(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn geometric_impulse() {
        let tf = TransferFunction::new(vec![1.0], vec![1.0, -0.5]).unwrap();
        assert_eq!(
            tf.impulse_response(4).coefficients(),
            &[1.0, 0.5, 0.25, 0.125]
        );
    }

    #[test]
    fn test_systems_have_unit_energy() {
        // Both benchmark systems are scaled so the root-sum-square of the
        // full impulse response is one; at 50 taps the truncation error
        // is far below the 0.02 slack.
        assert_abs_diff_eq!(g1().impulse_response(50).h2_norm(), 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(g2().impulse_response(50).h2_norm(), 1.0, epsilon = 0.02);
    }

    #[test]
    fn h2_norm_basics() {
        assert_eq!(
            ImpulseResponse::from_coefficients(vec![0.0, 0.0, 0.0]).h2_norm(),
            0.0
        );
        assert_abs_diff_eq!(
            ImpulseResponse::from_coefficients(vec![3.0, 4.0]).h2_norm(),
            5.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn test_system_poles_have_magnitude_09() {
        for tf in [g1(), g2()] {
            let poles = tf.poles();
            assert_eq!(poles.len(), 2);
            for p in poles {
                assert_abs_diff_eq!(p.norm(), 0.9, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn unstable_denominator_rejected() {
        let err = TransferFunction::new(vec![1.0], vec![1.0, -2.0]).unwrap_err();
        assert!(matches!(err, Error::UnstableSystem(_)));
    }

    #[test]
    fn non_monic_denominator_rejected() {
        let err = TransferFunction::new(vec![1.0], vec![2.0, -0.5]).unwrap_err();
        assert!(matches!(err, Error::NotMonic(_)));
    }

    #[test]
    fn regressor_examples() {
        let phi = build_regressor(&[1.0, 0.0, 0.0], 2);
        assert_eq!(
            phi,
            ndarray::array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]
        );
        let phi = build_regressor(&[7.0, 11.0], 1);
        assert_eq!(phi, ndarray::array![[7.0], [11.0]]);
        let phi = build_regressor(&[1.0, 2.0, 3.0], 3);
        assert_eq!(
            phi,
            ndarray::array![[1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [3.0, 2.0, 1.0]]
        );
    }

    #[test]
    fn regressor_is_linear_in_input() {
        use rand::Rng;
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(1..12);
            let n_g = rng.gen_range(1..=n);
            let alpha: f64 = rng.gen_range(-3.0..3.0);
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            let lhs = build_regressor(&scaled, n_g);
            let rhs = build_regressor(&u, n_g) * alpha;
            for (a, b) in lhs.iter().zip(rhs.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn impulse_input_recovers_impulse_response() {
        let tf = g1();
        let mut u = vec![0.0; 20];
        u[0] = 1.0;
        let data = Dataset::simulate(&tf, &u, 10, 0.0, 0).unwrap();
        let g = tf.impulse_response(10);
        for (t, gl) in g.coefficients().iter().enumerate() {
            assert_abs_diff_eq!(data.outputs()[t], *gl, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let data = Dataset::simulate(&g2(), &[0.0; 8], 4, 0.0, 5).unwrap();
        assert!(data.outputs().iter().all(|y| *y == 0.0));
    }

    #[test]
    fn simulate_is_seed_deterministic() {
        let u = gaussian_input(30, 11);
        let a = Dataset::simulate(&g1(), &u, 10, 0.3, 42).unwrap();
        let b = Dataset::simulate(&g1(), &u, 10, 0.3, 42).unwrap();
        assert_eq!(a.outputs(), b.outputs());
        let c = Dataset::simulate(&g1(), &u, 10, 0.3, 43).unwrap();
        assert_ne!(a.outputs(), c.outputs());
    }

    /// Random stable transfer function with poles drawn inside the disc of
    /// radius 0.95, assembled by expanding the pole factors.
    fn random_stable_tf(rng: &mut rand_xoshiro::Xoshiro256PlusPlus) -> TransferFunction {
        use rand::Rng;
        let n_pairs = rng.gen_range(0..2);
        let n_real = rng.gen_range(1..3);
        let mut den = vec![1.0f64];
        for _ in 0..n_real {
            let p: f64 = rng.gen_range(-0.9..0.9);
            // multiply by (1 - p q^{-1})
            let mut next = vec![0.0; den.len() + 1];
            for (k, &d) in den.iter().enumerate() {
                next[k] += d;
                next[k + 1] -= p * d;
            }
            den = next;
        }
        for _ in 0..n_pairs {
            let r: f64 = rng.gen_range(0.1..0.9);
            let th: f64 = rng.gen_range(0.1..3.0);
            // multiply by (1 - 2 r cosθ q^{-1} + r² q^{-2})
            let (c1, c2) = (-2.0 * r * th.cos(), r * r);
            let mut next = vec![0.0; den.len() + 2];
            for (k, &d) in den.iter().enumerate() {
                next[k] += d;
                next[k + 1] += c1 * d;
                next[k + 2] += c2 * d;
            }
            den = next;
        }
        let num: Vec<f64> = (0..rng.gen_range(1..4))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        TransferFunction::new(num, den).unwrap()
    }

    #[test]
    fn noise_free_simulation_matches_regressor_model() {
        use rand::Rng;
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(19);
        for trial in 0..25 {
            let tf = random_stable_tf(&mut rng);
            let n = rng.gen_range(10..40);
            let n_g = rng.gen_range(1..=n.min(15));
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let data = Dataset::simulate(&tf, &u, n_g, 0.0, trial as u64).unwrap();
            let g = Array1::from_vec(tf.impulse_response(n_g).coefficients().to_vec());
            let predicted = data.regressor().dot(&g);
            for (yp, y) in predicted.iter().zip(data.outputs().iter()) {
                let tol = 1e-12 * y.abs().max(1.0);
                assert!((yp - y).abs() <= tol, "|{yp} - {y}| > {tol}");
            }
        }
    }

    #[test]
    fn short_dataset_rejected() {
        let err = Dataset::from_records(vec![1.0, 2.0], vec![0.1, 0.2], 3, 0.5).unwrap_err();
        assert!(matches!(err, Error::ShortDataset { .. }));
        let err = Dataset::from_records(vec![1.0, 2.0], vec![0.1, 0.2], 0, 0.5).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn durand_kerner_finds_known_roots() {
        // (z - 0.5)(z - 0.2)(z + 0.4) = z^3 - 0.3 z^2 - 0.18 z + 0.04
        let roots = polynomial_roots(&[1.0, -0.3, -0.18, 0.04]);
        let mut mags: Vec<f64> = roots.iter().map(|r| r.re).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(mags[0], -0.4, epsilon = 1e-9);
        assert_abs_diff_eq!(mags[1], 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(mags[2], 0.5, epsilon = 1e-9);
    }
}

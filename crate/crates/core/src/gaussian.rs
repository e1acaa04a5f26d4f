//! Closed-form identities on scaled one-dimensional Gaussians.
//!
//! A [`Gaussian1`] stands for the unnormalized function
//! `exp(log_scale) * N(x; mean, variance)`. Every operation keeps track of the
//! scale so that chains of products and convolutions stay exact as density
//! identities, which is what the marginal likelihood needs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{ln_normal, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1<T> {
    pub mean: T,
    pub variance: T,
    pub log_scale: T,
}

fn check_variance<T: Real>(v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("variance must be positive and finite, got {v}")))
    }
}

fn check_transition<T: Real>(amplitude: T, decay: T) -> Result<()> {
    if !(amplitude > T::zero() && amplitude.is_finite()) {
        return Err(invalid(format!("amplitude must be positive, got {amplitude}")));
    }
    if !(decay > T::zero() && decay < T::one()) {
        return Err(invalid(format!("decay factor must lie in (0, 1), got {decay}")));
    }
    Ok(())
}

impl<T: Real> Gaussian1<T> {
    /// Normalized Gaussian density.
    pub fn new(mean: T, variance: T) -> Result<Self> {
        Self::with_log_scale(mean, variance, T::zero())
    }

    pub fn with_log_scale(mean: T, variance: T, log_scale: T) -> Result<Self> {
        check_variance(variance)?;
        if !mean.is_finite() {
            return Err(invalid(format!("mean must be finite, got {mean}")));
        }
        if !log_scale.is_finite() {
            return Err(invalid(format!("log scale must be finite, got {log_scale}")));
        }
        Ok(Self { mean, variance, log_scale })
    }

    pub fn std_dev(&self) -> T {
        self.variance.sqrt()
    }

    /// Same mean and variance with unit mass.
    pub fn normalized(&self) -> Self {
        Self { log_scale: T::zero(), ..*self }
    }

    /// Precision (inverse variance).
    pub fn precision(&self) -> T {
        self.variance.recip()
    }

    /// log of the represented function at `x`.
    pub fn ln_eval(&self, x: T) -> T {
        self.log_scale + ln_normal(x, self.mean, self.variance)
    }

    pub fn eval(&self, x: T) -> T {
        self.ln_eval(x).exp()
    }

    /// Second raw moment of the normalized density.
    pub fn second_moment(&self) -> T {
        self.variance + self.mean * self.mean
    }
}

/// Pointwise product. The overlap constant `N(mean_a; mean_b, var_a + var_b)`
/// is folded into the scale.
pub fn product<T: Real>(a: &Gaussian1<T>, b: &Gaussian1<T>) -> Result<Gaussian1<T>> {
    check_variance(a.variance)?;
    check_variance(b.variance)?;
    let total = a.variance + b.variance;
    let mean = (a.mean * b.variance + b.mean * a.variance) / total;
    let variance = a.variance * b.variance / total;
    let log_scale = a.log_scale + b.log_scale + ln_normal(a.mean, b.mean, total);
    Ok(Gaussian1 { mean, variance, log_scale })
}

/// Convolution `∫ a(x - u) b(u) du`.
pub fn convolve<T: Real>(a: &Gaussian1<T>, b: &Gaussian1<T>) -> Result<Gaussian1<T>> {
    check_variance(a.variance)?;
    check_variance(b.variance)?;
    Ok(Gaussian1 {
        mean: a.mean + b.mean,
        variance: a.variance + b.variance,
        log_scale: a.log_scale + b.log_scale,
    })
}

/// Pushes a message on `x_{n-1}` through the transition kernel
/// `N(x_n; decay * x_{n-1}, amplitude * (1 - decay^2))`, giving a message on `x_n`.
pub fn propagate_through_transition<T: Real>(
    msg: &Gaussian1<T>,
    amplitude: T,
    decay: T,
) -> Result<Gaussian1<T>> {
    check_variance(msg.variance)?;
    check_transition(amplitude, decay)?;
    // A + B²(σ² − A) equals B²σ² + A(1 − B²) and maps σ² = A to A bit-for-bit.
    let variance = amplitude + decay * decay * (msg.variance - amplitude);
    Ok(Gaussian1 {
        mean: decay * msg.mean,
        variance,
        log_scale: msg.log_scale,
    })
}

/// `E[xy]` under the density proportional to
/// `N(x; mu_x, var_x) N(y; B x, A (1 - B²)) N(y; mu_y, var_y)`.
///
/// With `q = A(1 - B²)` and `D = q + B² var_x + var_y` the pair is jointly
/// Gaussian with
///
/// ```text
/// cov(x, y) = B var_x var_y / D
/// E[x]      = ((var_y + q) mu_x + B var_x mu_y) / D
/// E[y]      = (B var_y mu_x + (q + B² var_x) mu_y) / D
/// ```
///
/// and `E[xy] = cov(x, y) + E[x] E[y]`.
pub fn bivariate_cross_moment<T: Real>(
    mu_x: T,
    var_x: T,
    mu_y: T,
    var_y: T,
    amplitude: T,
    decay: T,
) -> Result<T> {
    check_variance(var_x)?;
    check_variance(var_y)?;
    check_transition(amplitude, decay)?;
    let b2 = decay * decay;
    let q = amplitude * (T::one() - b2);
    let d = q + b2 * var_x + var_y;
    let cov = decay * var_x * var_y / d;
    let ex = ((var_y + q) * mu_x + decay * var_x * mu_y) / d;
    let ey = (decay * var_y * mu_x + (q + b2 * var_x) * mu_y) / d;
    Ok(cov + ex * ey)
}

#[cfg(test)]
mod tests {
    use super::*;

    type Gaussian1 = super::Gaussian1<f64>;
    use approx::assert_relative_eq;

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            s += f(lo + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn product_of_identical_standard_normals() {
        let g = Gaussian1::new(0.0, 1.0).unwrap();
        let p = product(&g, &g).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.variance, 0.5);
    }

    #[test]
    fn product_averages_means_at_equal_variance() {
        let a = Gaussian1::new(1.0, 1.0).unwrap();
        let b = Gaussian1::new(3.0, 1.0).unwrap();
        let p = product(&a, &b).unwrap();
        assert_relative_eq!(p.mean, 2.0);
        assert_relative_eq!(p.variance, 0.5);
    }

    #[test]
    fn product_scale_matches_quadrature() {
        let a = Gaussian1::with_log_scale(0.3, 0.7, -0.2).unwrap();
        let b = Gaussian1::with_log_scale(-1.1, 2.5, 0.4).unwrap();
        let p = product(&a, &b).unwrap();
        let sd = p.std_dev();
        let mass = trapezoid(|x| a.eval(x) * b.eval(x), p.mean - 10.0 * sd, p.mean + 10.0 * sd, 20_000);
        assert!((mass - p.log_scale.exp()).abs() < 1e-8 * mass);
        let mean = trapezoid(|x| x * a.eval(x) * b.eval(x), p.mean - 10.0 * sd, p.mean + 10.0 * sd, 20_000) / mass;
        assert!((mean - p.mean).abs() < 1e-8);
    }

    #[test]
    fn convolution_adds_moments() {
        let s = Gaussian1::new(0.0, 1.0).unwrap();
        let c = convolve(&s, &s).unwrap();
        assert_eq!((c.mean, c.variance), (0.0, 2.0));
        let c = convolve(&Gaussian1::new(1.0, 4.0).unwrap(), &Gaussian1::new(-1.0, 9.0).unwrap()).unwrap();
        assert_eq!((c.mean, c.variance), (0.0, 13.0));
    }

    #[test]
    fn convolution_matches_discrete_convolution() {
        let a = Gaussian1::new(0.5, 0.8).unwrap();
        let b = Gaussian1::new(-0.2, 1.3).unwrap();
        let c = convolve(&a, &b).unwrap();
        for &x in &[-2.0, -0.4, 0.3, 1.7] {
            let direct = trapezoid(|u| a.eval(x - u) * b.eval(u), -15.0, 15.0, 30_000);
            assert!((direct - c.eval(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn transition_moments() {
        let (a, b) = (1.5_f64, 0.6);
        let m = Gaussian1::new(0.0, 0.4).unwrap();
        let p = propagate_through_transition(&m, a, b).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_relative_eq!(p.variance, b * b * 0.4 + a * (1.0 - b * b), max_relative = 1e-15);
    }

    #[test]
    fn transition_frozen_limit() {
        let m = Gaussian1::new(0.2, 0.37).unwrap();
        let p = propagate_through_transition(&m, 1.0, 1.0 - 1e-12).unwrap();
        assert_relative_eq!(p.variance, 0.37, max_relative = 1e-10);
    }

    #[test]
    fn transition_keeps_stationary_law() {
        for &a in &[0.3_f64, 1.0, 2.7] {
            for &b in &[0.01, 0.3, 0.77, 0.999] {
                let m = Gaussian1::new(0.0, a).unwrap();
                let p = propagate_through_transition(&m, a, b).unwrap();
                assert_eq!(p.variance, a);
                assert_eq!(p.mean, 0.0);
            }
        }
    }

    #[test]
    fn transition_rejects_bad_decay() {
        let m = Gaussian1::new(0.0, 1.0).unwrap();
        assert!(propagate_through_transition(&m, 1.0, 1.0).is_err());
        assert!(propagate_through_transition(&m, 1.0, 0.0).is_err());
        assert!(propagate_through_transition(&m, -1.0, 0.5).is_err());
    }

    #[test]
    fn kernels_reject_bad_variance() {
        assert!(Gaussian1::new(0.0, 0.0).is_err());
        assert!(Gaussian1::new(0.0, -1.0).is_err());
        let bad = Gaussian1 { mean: 0.0, variance: -1.0, log_scale: 0.0 };
        let ok = Gaussian1::new(0.0, 1.0).unwrap();
        assert!(product(&bad, &ok).is_err());
        assert!(convolve(&ok, &bad).is_err());
    }

    #[test]
    fn cross_moment_decouples_without_memory() {
        let v: f64 = bivariate_cross_moment(0.0, 1.0, 0.0, 0.5, 1.0, 1e-9).unwrap();
        assert!(v.abs() < 1e-8);
    }

    #[test]
    fn cross_moment_is_even_under_mean_flip() {
        let a = bivariate_cross_moment(0.5, 1.0, -0.3, 0.5, 1.0, 0.7).unwrap();
        let b = bivariate_cross_moment(-0.5, 1.0, 0.3, 0.5, 1.0, 0.7).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let g = super::Gaussian1::<f32>::new(1.0, 2.0).unwrap();
        let p = propagate_through_transition(&g, 2.0, 0.5).unwrap();
        assert_eq!(p.mean, 0.5);
        assert!((p.variance - 2.0).abs() < 1e-6);
    }
}

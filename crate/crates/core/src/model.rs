//! The latent Ornstein–Uhlenbeck chain and its noisy observations.
//!
//! Latent dynamics: `x_{i+1} ~ N(B x_i, A (1 - B²))` with `B = exp(-dt / tau)`
//! and `x_1 ~ N(0, A)`. Observations: `y_i ~ N(x_i, sigma_n² + sigma_m² x_i²)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{ln_normal, Real};
use crate::series::TimeSeries;

/// Amplitude (stationary variance) and relaxation time of the latent process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams<T> {
    #[serde(rename = "A")]
    pub amplitude: T,
    pub tau: T,
}

impl<T: Real> OuParams<T> {
    pub fn new(amplitude: T, tau: T) -> Result<Self> {
        if !(amplitude > T::zero() && amplitude.is_finite()) {
            return Err(invalid(format!("amplitude must be positive, got {amplitude}")));
        }
        if !(tau > T::zero() && tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { amplitude, tau })
    }

    /// `B(dt) = exp(-dt / tau)`.
    pub fn decay(&self, dt: T) -> T {
        (-dt / self.tau).exp()
    }

    /// `A (1 - B²)`, evaluated through `expm1` so it stays accurate for `dt << tau`.
    pub fn transition_variance(&self, dt: T) -> T {
        -self.amplitude * (-T::two() * dt / self.tau).exp_m1()
    }

    /// Inverse of [`OuParams::decay`]: relaxation time for a given one-step decay.
    pub fn tau_from_decay(decay: T, dt: T) -> T {
        -dt / decay.ln()
    }
}

/// Thermal (additive) and multiplicative measurement noise amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseParams<T> {
    pub sigma_n: T,
    pub sigma_m: T,
}

impl<T: Real> NoiseParams<T> {
    pub fn new(sigma_n: T, sigma_m: T) -> Result<Self> {
        if !(sigma_n >= T::zero() && sigma_n.is_finite()) {
            return Err(invalid(format!("sigma_n must be non-negative, got {sigma_n}")));
        }
        if !(sigma_m >= T::zero() && sigma_m.is_finite()) {
            return Err(invalid(format!("sigma_m must be non-negative, got {sigma_m}")));
        }
        Ok(Self { sigma_n, sigma_m })
    }

    pub fn thermal(sigma_n: T) -> Result<Self> {
        Self::new(sigma_n, T::zero())
    }

    /// Observation variance at latent value `x`.
    #[inline]
    pub fn variance_at(&self, x: T) -> T {
        self.sigma_n * self.sigma_n + self.sigma_m * self.sigma_m * x * x
    }

    pub fn is_silent(&self) -> bool {
        self.sigma_n == T::zero() && self.sigma_m == T::zero()
    }

    /// Split a total noise magnitude into thermal and multiplicative parts with
    /// `sigma_n² (1 + rho) = total²` and `sigma_m² = rho sigma_n² / signal_power`.
    pub fn from_total(total: T, ratio: NoiseRatio<T>, signal_power: T) -> Result<Self> {
        if !(total >= T::zero()) || !(signal_power > T::zero()) {
            return Err(invalid("total noise must be >= 0 and signal power > 0"));
        }
        let sn2 = total * total / (T::one() + ratio.get());
        let sm2 = ratio.get() * sn2 / signal_power;
        Self::new(sn2.sqrt(), sm2.sqrt())
    }
}

/// Multiplicative-to-thermal variance ratio `E[x²] sigma_m² / sigma_n²`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseRatio<T>(T);

impl<T: Real> NoiseRatio<T> {
    pub fn new(rho: T) -> Result<Self> {
        if rho >= T::zero() && rho.is_finite() {
            Ok(Self(rho))
        } else {
            Err(invalid(format!("noise ratio must be finite and >= 0, got {rho}")))
        }
    }

    pub fn of(noise: &NoiseParams<T>, signal_power: T) -> Result<Self> {
        if noise.sigma_n == T::zero() {
            return Err(invalid("noise ratio undefined without thermal noise"));
        }
        Self::new(signal_power * noise.sigma_m * noise.sigma_m / (noise.sigma_n * noise.sigma_n))
    }

    pub fn get(self) -> T {
        self.0
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn std_normal<T: Real>(rng: &mut ChaCha8Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

/// Draws `n` samples of the latent chain starting from its stationary law.
pub fn simulate_latent<T: Real>(params: &OuParams<T>, n: usize, dt: T, seed: u64) -> Result<TimeSeries<T>> {
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let mut rng = rng(seed);
    let decay = params.decay(dt);
    let step_sd = params.transition_variance(dt).sqrt();
    let mut values = Vec::with_capacity(n);
    let mut x = params.amplitude.sqrt() * std_normal::<T>(&mut rng);
    values.push(x);
    for _ in 1..n {
        x = decay * x + step_sd * std_normal::<T>(&mut rng);
        values.push(x);
    }
    TimeSeries::new(dt, values).map(|s| s.with_seed(seed))
}

/// Adds independent measurement noise with variance `sigma_n² + sigma_m² x_i²`.
pub fn add_noise<T: Real>(x: &TimeSeries<T>, noise: &NoiseParams<T>, seed: u64) -> TimeSeries<T> {
    let mut rng = rng(seed);
    let values = x
        .values
        .iter()
        .map(|&xi| {
            let z = std_normal::<T>(&mut rng);
            if noise.is_silent() {
                xi
            } else {
                xi + noise.variance_at(xi).sqrt() * z
            }
        })
        .collect();
    TimeSeries { dt: x.dt, values, seed: Some(seed) }
}

/// Exact `log p(y | A, tau, sigma_n)` for thermal noise only, by a predict/update
/// sweep over the innovations.
pub fn marginal_loglik_additive<T: Real>(y: &TimeSeries<T>, params: &OuParams<T>, sigma_n: T) -> Result<T> {
    if !(sigma_n >= T::zero() && sigma_n.is_finite()) {
        return Err(invalid(format!("sigma_n must be non-negative, got {sigma_n}")));
    }
    if y.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("series contains non-finite values"));
    }
    let r = sigma_n * sigma_n;
    let decay = params.decay(y.dt);
    let q = params.transition_variance(y.dt);
    let (mut mean, mut var) = (T::zero(), params.amplitude);
    let mut total = T::zero();
    for (i, &obs) in y.values.iter().enumerate() {
        if i > 0 {
            mean = decay * mean;
            var = decay * decay * var + q;
        }
        let s = var + r;
        total = total + ln_normal(obs, mean, s);
        let gain = var / s;
        mean = mean + gain * (obs - mean);
        var = var * r / s;
    }
    Ok(total)
}

/// Gradient of the joint log density with respect to the latents and the
/// log-transformed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGradient<T> {
    pub latents: Vec<T>,
    pub log_amplitude: T,
    pub log_tau: T,
    pub log_sigma_n: T,
    pub log_sigma_m: T,
}

/// `log p(x, y | A, tau, sigma_n, sigma_m)` and its gradient.
pub fn joint_logdensity_and_gradient<T: Real>(
    y: &TimeSeries<T>,
    x: &[T],
    params: &OuParams<T>,
    noise: &NoiseParams<T>,
) -> Result<(T, JointGradient<T>)> {
    let mut grad = vec![T::zero(); x.len()];
    let (lp, dparams) = joint_logdensity_into(&y.values, y.dt, x, params, noise, &mut grad)?;
    Ok((
        lp,
        JointGradient {
            latents: grad,
            log_amplitude: dparams[0],
            log_tau: dparams[1],
            log_sigma_n: dparams[2],
            log_sigma_m: dparams[3],
        },
    ))
}

/// Allocation-free core of [`joint_logdensity_and_gradient`]. Writes the latent
/// gradient into `grad_x` (overwriting) and returns the derivatives with respect
/// to `[ln A, ln tau, ln sigma_n, ln sigma_m]`.
pub fn joint_logdensity_into<T: Real>(
    y: &[T],
    dt: T,
    x: &[T],
    params: &OuParams<T>,
    noise: &NoiseParams<T>,
    grad_x: &mut [T],
) -> Result<(T, [T; 4])> {
    joint_core(y, dt, x, None, params, noise, grad_x)
}

/// As [`joint_logdensity_into`] with the residuals `y - x` supplied, for callers
/// that know them more accurately than the difference does.
pub fn joint_logdensity_residual_into<T: Real>(
    y: &[T],
    dt: T,
    x: &[T],
    residual: &[T],
    params: &OuParams<T>,
    noise: &NoiseParams<T>,
    grad_x: &mut [T],
) -> Result<(T, [T; 4])> {
    if residual.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: residual.len() });
    }
    joint_core(y, dt, x, Some(residual), params, noise, grad_x)
}

fn joint_core<T: Real>(
    y: &[T],
    dt: T,
    x: &[T],
    residual: Option<&[T]>,
    params: &OuParams<T>,
    noise: &NoiseParams<T>,
    grad_x: &mut [T],
) -> Result<(T, [T; 4])> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if grad_x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: grad_x.len() });
    }
    if n == 0 {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    let half = T::half();
    let two = T::two();
    let ln2pi = T::ln_two_pi();
    let sn2 = noise.sigma_n * noise.sigma_n;
    let sm2 = noise.sigma_m * noise.sigma_m;

    let mut lp = T::zero();
    let (mut d_ln_sn, mut d_ln_sm) = (T::zero(), T::zero());
    for i in 0..n {
        let xi = x[i];
        let s = sn2 + sm2 * xi * xi;
        if !(s > T::zero()) {
            return Err(invalid("observation variance vanished; need sigma_n > 0 or x != 0"));
        }
        let r = residual.map_or(y[i] - xi, |r| r[i]);
        let r2s = r * r / s;
        lp = lp - half * (ln2pi + s.ln() + r2s);
        // d/ds of the observation term
        let h = half * (r2s - T::one()) / s;
        grad_x[i] = r / s + two * sm2 * xi * h;
        d_ln_sn = d_ln_sn + two * sn2 * h;
        d_ln_sm = d_ln_sm + two * sm2 * xi * xi * h;
    }

    let a = params.amplitude;
    let decay = params.decay(dt);
    let q = params.transition_variance(dt);
    let ln_q = q.ln();

    lp = lp - half * (ln2pi + a.ln() + x[0] * x[0] / a);
    grad_x[0] = grad_x[0] - x[0] / a;
    let mut d_ln_a = -half + half * x[0] * x[0] / a;

    let mut sum_d2 = T::zero();
    let mut sum_dx = T::zero();
    for i in 0..n - 1 {
        let d = x[i + 1] - decay * x[i];
        let dq = d / q;
        grad_x[i + 1] = grad_x[i + 1] - dq;
        grad_x[i] = grad_x[i] + decay * dq;
        sum_d2 = sum_d2 + d * d;
        sum_dx = sum_dx + d * x[i];
    }
    let m = T::from_count(n - 1);
    lp = lp - half * (m * (ln2pi + ln_q) + sum_d2 / q);
    d_ln_a = d_ln_a + half * (sum_d2 / q - m);
    // dq/dB = -2 A B and dB/d(ln tau) = B dt / tau
    let dq_db = -two * a * decay;
    let d_db = dq_db * half * (sum_d2 / q - m) / q + sum_dx / q;
    let d_ln_tau = d_db * decay * dt / params.tau;

    Ok((lp, [d_ln_a, d_ln_tau, d_ln_sn, d_ln_sm]))
}

//! Power spectra, second-order spectra and fourth-order correlations.
//!
//! Spectra are one-sided densities on `f_k = k / (N dt)`, `k = 1 ..= N/2`
//! (the mean is removed, so the zero bin is dropped). Their area is
//! `sum(power) * df`.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::TimeSeries;

/// Shortest series accepted by the estimators.
pub const MIN_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Rescaled so the area equals the population variance of the input.
    AreaEqualsVariance,
    /// Plain one-sided periodogram density.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Periodogram,
    /// Hann-windowed segments with 50% overlap, averaged.
    Welch { segments: usize },
}

impl Estimator {
    pub fn welch() -> Self {
        Estimator::Welch { segments: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub normalization: Normalization,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        self.freqs[0]
    }

    pub fn area(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.df()
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_pairs(w, ["freq", "power"], &self.freqs, &self.power)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
}

impl CorrelationCurve {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_pairs(w, ["lag", "value"], &self.lags, &self.values)
    }
}

fn write_pairs<W: Write>(w: W, header: [&str; 2], a: &[f64], b: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(header).map_err(err)?;
    for (x, y) in a.iter().zip(b) {
        out.write_record([x.to_string(), y.to_string()]).map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

fn demeaned(values: &[f64]) -> Vec<f64> {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - m).collect()
}

fn population_variance(values: &[f64]) -> f64 {
    let d = demeaned(values);
    d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
}

/// One-sided `|X_k|²` for `k = 1 ..= n/2` of a windowed segment, scaled to a
/// density: `2 dt |X_k|² / sum(w²)`, the Nyquist bin not doubled.
fn segment_density(fft: &Arc<dyn Fft<f64>>, seg: &[f64], window: &[f64], dt: f64) -> Vec<f64> {
    let n = seg.len();
    let d = demeaned(seg);
    let mut buf: Vec<Complex<f64>> = d.iter().zip(window).map(|(v, w)| Complex::new(v * w, 0.0)).collect();
    fft.process(&mut buf);
    let norm = dt / window.iter().map(|w| w * w).sum::<f64>();
    (1..=n / 2)
        .map(|k| {
            let p = buf[k].norm_sqr() * norm;
            if 2 * k == n {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

fn spectrum_of(values: &[f64], dt: f64, estimator: Estimator, normalization: Normalization) -> Result<Spectrum> {
    let n = values.len();
    if n < MIN_LEN {
        return Err(Error::TooShort { len: n, min: MIN_LEN });
    }
    let mut planner = FftPlanner::new();
    let (len, power) = match estimator {
        Estimator::Periodogram => {
            let fft = planner.plan_fft_forward(n);
            (n, segment_density(&fft, values, &vec![1.0; n], dt))
        }
        Estimator::Welch { segments } => {
            if segments == 0 {
                return Err(invalid("Welch needs at least one segment"));
            }
            let len = 2 * n / (segments + 1);
            if len < MIN_LEN {
                return Err(Error::TooShort { len: n, min: MIN_LEN * (segments + 1) / 2 });
            }
            let fft = planner.plan_fft_forward(len);
            let window = hann(len);
            let mut acc = vec![0.0; len / 2];
            for s in 0..segments {
                let start = s * len / 2;
                for (a, p) in acc.iter_mut().zip(segment_density(&fft, &values[start..start + len], &window, dt)) {
                    *a += p;
                }
            }
            acc.iter_mut().for_each(|a| *a /= segments as f64);
            (len, acc)
        }
    };
    let df = 1.0 / (len as f64 * dt);
    let freqs: Vec<f64> = (1..=len / 2).map(|k| k as f64 * df).collect();
    let mut spec = Spectrum { freqs, power, normalization };
    if normalization == Normalization::AreaEqualsVariance {
        let area = spec.area();
        let var = population_variance(values);
        if area > 0.0 {
            spec.power.iter_mut().for_each(|p| *p *= var / area);
        }
    }
    Ok(spec)
}

/// Periodogram of the mean-removed series.
pub fn periodogram(y: &TimeSeries, normalization: Normalization) -> Result<Spectrum> {
    spectrum_of(&y.values, y.dt, Estimator::Periodogram, normalization)
}

/// Spectrum of the mean-removed series by the chosen estimator.
pub fn power_spectrum(y: &TimeSeries, estimator: Estimator, normalization: Normalization) -> Result<Spectrum> {
    spectrum_of(&y.values, y.dt, estimator, normalization)
}

/// Spectrum of `y²`, area normalized to the variance of `y²`.
pub fn second_order_spectrum(y: &TimeSeries, estimator: Estimator) -> Result<Spectrum> {
    let sq: Vec<f64> = y.values.iter().map(|v| v * v).collect();
    spectrum_of(&sq, y.dt, estimator, Normalization::AreaEqualsVariance)
}

/// `E[x_s² x_t²]` for an OU process `dx = -theta x dt + sigma dW` started at
/// `x_0 = 0`:
/// `sigma⁴/(4 theta²) [3 a² e^{-2 theta d} + a (1 - e^{-2 theta d})]`,
/// `a = 1 - e^{-2 theta min(s,t)}`, `d = |t - s|`.
pub fn analytic_g2(s: f64, t: f64, theta: f64, sigma: f64) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0 && s.is_finite() && t.is_finite()) {
        return Err(invalid(format!("times must be non-negative, got ({s}, {t})")));
    }
    if !(theta > 0.0 && theta.is_finite() && sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("theta and sigma must be positive, got ({theta}, {sigma})")));
    }
    let a = -(-2.0 * theta * s.min(t)).exp_m1();
    let far = -2.0 * theta * (t - s).abs();
    let scale = (sigma * sigma / (2.0 * theta)).powi(2);
    Ok(scale * (3.0 * a * a * far.exp() - a * far.exp_m1()))
}

/// Stationary limit of [`analytic_g2`]: `A² (1 + 2 e^{-2 |lag| / tau})` with
/// `A = sigma² / (2 theta)`, `tau = 1 / theta`.
pub fn stationary_g2(lag: f64, theta: f64, sigma: f64) -> Result<f64> {
    if !lag.is_finite() {
        return Err(invalid(format!("lag must be finite, got {lag}")));
    }
    analytic_g2(0.0, 0.0, theta, sigma)?;
    let amp = sigma * sigma / (2.0 * theta);
    Ok(amp * amp * (1.0 + 2.0 * (-2.0 * theta * lag.abs()).exp()))
}

/// One-sided density of a sampled process with covariance `c e^{-rate |lag|}`
/// at spacing `dt`.
pub fn exponential_covariance_spectrum(freqs: &[f64], c: f64, rate: f64, dt: f64) -> Vec<f64> {
    let r = (-rate * dt).exp();
    freqs
        .iter()
        .map(|f| {
            let cos = (2.0 * std::f64::consts::PI * f * dt).cos();
            2.0 * dt * c * (1.0 - r * r) / (1.0 - 2.0 * r * cos + r * r)
        })
        .collect()
}

/// Analytic second-order spectrum of a stationary OU signal on `freqs`. The
/// covariance of `x²` is `g2(lag) - A² = 2 A² e^{-2 lag / tau}`.
pub fn ou_second_order_spectrum(freqs: &[f64], amplitude: f64, tau: f64, dt: f64) -> Result<Vec<f64>> {
    let theta = 1.0 / tau;
    let sigma = (2.0 * amplitude * theta).sqrt();
    let c = stationary_g2(0.0, theta, sigma)? - amplitude * amplitude;
    Ok(exponential_covariance_spectrum(freqs, c, 2.0 * theta, dt))
}

/// `g(k) = mean_i y_i² y_{i+k}²` for `k = 0 ..= max_lag`.
pub fn empirical_g2(x: &TimeSeries, max_lag: usize) -> Result<CorrelationCurve> {
    let n = x.len();
    if 4 * max_lag >= n {
        return Err(invalid(format!("max_lag {max_lag} must be below len/4 = {}", n as f64 / 4.0)));
    }
    let sq: Vec<f64> = x.values.iter().map(|v| v * v).collect();
    let values = (0..=max_lag)
        .map(|k| (0..n - k).map(|i| sq[i] * sq[i + k]).sum::<f64>() / (n - k) as f64)
        .collect();
    let lags = (0..=max_lag).map(|k| k as f64 * x.dt).collect();
    Ok(CorrelationCurve { lags, values })
}

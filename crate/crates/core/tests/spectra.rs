use ou_denoise::model::{add_noise, simulate_latent};
use ou_denoise::spectra::{
    analytic_g2, empirical_g2, ou_second_order_spectrum, periodogram, power_spectrum, second_order_spectrum,
    stationary_g2, Estimator, Normalization, Spectrum,
};
use ou_denoise::{NoiseParams, OuParams, TimeSeries};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use testkit::{exponential_rate, lorentzian_corner, mean, ou_path_at, rng, slope, std_error};

fn white(n: usize, dt: f64, seed: u64) -> TimeSeries {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    TimeSeries::new(dt, (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
}

fn ou(n: usize, dt: f64, seed: u64) -> TimeSeries {
    simulate_latent(&OuParams::new(1.0, 1.0).unwrap(), n, dt, seed).unwrap()
}

fn averaged(seeds: u64, f: impl Fn(u64) -> Spectrum) -> Spectrum {
    let mut acc = f(0);
    for s in 1..seeds {
        for (a, p) in acc.power.iter_mut().zip(f(s).power) {
            *a += p;
        }
    }
    acc.power.iter_mut().for_each(|p| *p /= seeds as f64);
    acc
}

/// Log-log slope over `lo <= f <= hi`.
fn band_slope(s: &Spectrum, lo: f64, hi: f64) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = s
        .freqs
        .iter()
        .zip(&s.power)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(f, p)| (f.ln(), p.ln()))
        .unzip();
    slope(&x, &y)
}

fn top_decade_slope(s: &Spectrum) -> f64 {
    let top = *s.freqs.last().unwrap();
    band_slope(s, top / 10.0, top)
}

fn corner_below(s: &Spectrum, cap: f64) -> f64 {
    let k = s.freqs.iter().take_while(|f| **f <= cap).count();
    lorentzian_corner(&s.freqs[..k], &s.power[..k])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_spectrum_has_area_equal_to_variance(
        values in prop::collection::vec(-5.0f64..5.0, 8..300),
        dt in 0.01f64..3.0,
        welch in any::<bool>(),
    ) {
        let y = TimeSeries::new(dt, values).unwrap();
        prop_assume!(y.variance() > 1e-9);
        let est = if welch && y.len() >= 36 { Estimator::welch() } else { Estimator::Periodogram };
        let s = power_spectrum(&y, est, Normalization::AreaEqualsVariance).unwrap();
        prop_assert!((s.area() - y.variance()).abs() <= 1e-10 * y.variance().max(1.0));
        prop_assert!(s.freqs.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(s.power.iter().all(|p| *p >= 0.0));
        let sq = TimeSeries::new(dt, y.values.iter().map(|v| v * v).collect()).unwrap();
        let s2 = second_order_spectrum(&y, est).unwrap();
        prop_assert!((s2.area() - sq.variance()).abs() <= 1e-10 * sq.variance().max(1.0));
    }

    #[test]
    fn g2_is_symmetric(s in 0.0f64..20.0, t in 0.0f64..20.0, theta in 0.05f64..5.0, sigma in 0.1f64..3.0) {
        prop_assert_eq!(analytic_g2(s, t, theta, sigma).unwrap(), analytic_g2(t, s, theta, sigma).unwrap());
    }

    #[test]
    fn g2_diagonal_is_gaussian_kurtosis(s in 0.0f64..20.0, theta in 0.05f64..5.0, sigma in 0.1f64..3.0) {
        let var = sigma * sigma / (2.0 * theta) * -(-2.0 * theta * s).exp_m1();
        let g = analytic_g2(s, s, theta, sigma).unwrap();
        prop_assert!((g - 3.0 * var * var).abs() <= 1e-12 * g.max(1e-300));
    }
}

#[test]
fn estimators_reject_short_series() {
    let y = TimeSeries::new(1.0, vec![1.0, 2.0, 0.0, 1.0, 3.0, 2.0, 1.0]).unwrap();
    assert!(periodogram(&y, Normalization::Raw).is_err());
    assert!(second_order_spectrum(&y, Estimator::Periodogram).is_err());
    let y = white(20, 1.0, 0);
    assert!(power_spectrum(&y, Estimator::welch(), Normalization::Raw).is_err());
    assert!(power_spectrum(&y, Estimator::Welch { segments: 0 }, Normalization::Raw).is_err());
}

#[test]
fn white_noise_spectra_are_flat() {
    let first = averaged(100, |s| periodogram(&white(2048, 1.0, s), Normalization::AreaEqualsVariance).unwrap());
    let m = top_decade_slope(&first);
    assert!(m.abs() < 0.1, "first order slope {m}");
    let second = averaged(100, |s| second_order_spectrum(&white(2048, 1.0, 1000 + s), Estimator::Periodogram).unwrap());
    let m = top_decade_slope(&second);
    assert!(m.abs() < 0.1, "second order slope {m}");
}

#[test]
fn ou_spectrum_has_lorentzian_corner() {
    let s = averaged(100, |k| periodogram(&ou(4096, 0.1, k), Normalization::AreaEqualsVariance).unwrap());
    let fc = corner_below(&s, 1.0);
    let expect = 1.0 / (2.0 * std::f64::consts::PI);
    assert!((fc / expect - 1.0).abs() < 0.2, "corner {fc} vs {expect}");
}

#[test]
fn ou_second_order_corner_is_at_double_rate() {
    let s = averaged(100, |k| second_order_spectrum(&ou(4096, 0.1, k), Estimator::Periodogram).unwrap());
    let fc = corner_below(&s, 2.0);
    let expect = 1.0 / std::f64::consts::PI;
    assert!((fc / expect - 1.0).abs() < 0.3, "corner {fc} vs {expect}");
    // the analytic curve has the same shape up to the area scaling
    let analytic = ou_second_order_spectrum(&s.freqs, 1.0, 1.0, 0.1).unwrap();
    let fa = corner_below(&Spectrum { power: analytic, ..s.clone() }, 2.0);
    assert!((fa / fc - 1.0).abs() < 0.3, "{fa} vs {fc}");
}

#[test]
fn analytic_second_order_spectrum_integrates_to_variance_of_square() {
    let dt = 0.1;
    let n = 1 << 16;
    let df = 1.0 / (n as f64 * dt);
    let freqs: Vec<f64> = (1..=n / 2).map(|k| k as f64 * df).collect();
    let p = ou_second_order_spectrum(&freqs, 1.5, 2.0, dt).unwrap();
    // Var(x²) = 2 A²; the zero bin carries a fraction ~ df of it
    let area = p.iter().sum::<f64>() * df;
    assert!((area / (2.0 * 1.5 * 1.5) - 1.0).abs() < 1e-2, "{area}");
}

#[test]
fn multiplicative_second_order_spectrum_has_a_knee() {
    let noise = NoiseParams::new(0.0, 0.2).unwrap();
    let s = averaged(100, |k| {
        second_order_spectrum(&add_noise(&ou(4096, 0.1, k), &noise, 500 + k), Estimator::Periodogram).unwrap()
    });
    let knee = 1.0 / std::f64::consts::PI;
    let m = band_slope(&s, 2.0 * knee, 6.0 * knee);
    assert!(m < -0.5, "slope past knee {m}");
    let low = band_slope(&s, s.freqs[0], 0.2 * knee);
    assert!(low > -0.5, "slope below knee {low}");
}

#[test]
fn welch_averaging_keeps_the_shape() {
    let s = averaged(20, |k| power_spectrum(&ou(4096, 0.1, k), Estimator::welch(), Normalization::AreaEqualsVariance).unwrap());
    let fc = corner_below(&s, 1.0);
    let expect = 1.0 / (2.0 * std::f64::consts::PI);
    assert!((fc / expect - 1.0).abs() < 0.25, "corner {fc} vs {expect}");
}

#[test]
fn g2_agrees_with_simulated_paths() {
    let times = [0.1, 0.5, 1.0, 2.0];
    let (theta, sigma) = (1.0, 2f64.sqrt());
    let mut r = rng(42);
    let paths: Vec<Vec<f64>> = (0..100_000).map(|_| ou_path_at(&times, 0.0, theta, sigma, &mut r)).collect();
    for (i, s) in times.iter().enumerate() {
        for (j, t) in times.iter().enumerate() {
            let prod: Vec<f64> = paths.iter().map(|p| p[i] * p[i] * p[j] * p[j]).collect();
            let (m, se) = (mean(&prod), std_error(&prod));
            let g = analytic_g2(*s, *t, theta, sigma).unwrap();
            assert!((m - g).abs() < 3.0 * se, "({s}, {t}): {m} ± {se} vs {g}");
        }
    }
}

/// The two bracketings found in print, both with `sigma⁴ e^{-2θ(s+t)} / (2θ)` in front.
fn printed_g2(s: f64, t: f64, theta: f64, sigma: f64, grouped: bool) -> f64 {
    let (lo, hi) = (s.min(t), s.max(t));
    let e = |x: f64| (2.0 * theta * x).exp();
    let first = if grouped {
        3.0 / (2.0 * theta) * (e(lo) * e(lo) - 2.0 * e(lo) + 1.0)
    } else {
        3.0 / (2.0 * theta) * e(lo) * e(lo) - 2.0 * e(lo) + 1.0
    };
    sigma.powi(4) * (-2.0 * theta * (s + t)).exp() / (2.0 * theta) * (first + (e(lo) - 1.0) * (e(hi) - e(lo)))
}

#[test]
fn printed_bracketings_are_rejected_by_simulation() {
    let (theta, sigma) = (1.0, 2f64.sqrt());
    let (s, t) = (0.5, 2.0);
    let mut r = rng(7);
    let prod: Vec<f64> = (0..100_000)
        .map(|_| {
            let p = ou_path_at(&[s, t], 0.0, theta, sigma, &mut r);
            p[0] * p[0] * p[1] * p[1]
        })
        .collect();
    let (m, se) = (mean(&prod), std_error(&prod));
    assert!((m - analytic_g2(s, t, theta, sigma).unwrap()).abs() < 3.0 * se);
    for grouped in [true, false] {
        let g = printed_g2(s, t, theta, sigma, grouped);
        assert!((m - g).abs() > 10.0 * se, "grouped={grouped}: {g} vs {m} ± {se}");
    }
    // on the diagonal the cross term vanishes and the grouped form is exact
    for s in [0.1, 0.5, 1.0, 2.0] {
        let g = analytic_g2(s, s, theta, sigma).unwrap();
        assert!((printed_g2(s, s, theta, sigma, true) - g).abs() < 1e-12 * g);
        assert!((printed_g2(s, s, theta, sigma, false) - g).abs() > 1e-3 * g);
    }
}

#[test]
fn g2_is_stable_far_from_the_origin() {
    for (s, t) in [(50.0, 50.0), (49.0, 50.0), (50.0, 0.5), (1e3, 1e3 + 0.3)] {
        let g = analytic_g2(s, t, 1.0, 2f64.sqrt()).unwrap();
        assert!(g.is_finite() && g > 0.0);
        let stat = stationary_g2(t - s, 1.0, 2f64.sqrt()).unwrap();
        if s.min(t) >= 49.0 {
            assert!((g - stat).abs() < 1e-12 * stat, "({s}, {t}): {g} vs {stat}");
        }
    }
    assert_eq!(stationary_g2(0.0, 2.0, 2.0).unwrap(), 3.0);
    assert!(analytic_g2(-1.0, 1.0, 1.0, 1.0).is_err());
    assert!(analytic_g2(1.0, 1.0, 0.0, 1.0).is_err());
    assert!(analytic_g2(1.0, 1.0, 1.0, -1.0).is_err());
}

#[test]
fn empirical_g2_lag_zero_is_fourth_moment() {
    let y = white(500, 0.5, 3);
    let g = empirical_g2(&y, 100).unwrap();
    let m4 = y.values.iter().map(|v| (v * v) * (v * v)).sum::<f64>() / y.len() as f64;
    assert_eq!(g.values[0], m4);
    assert_eq!(g.lags[0], 0.0);
    assert_eq!(g.lags[3], 1.5);
    assert!(empirical_g2(&y, 125).is_err());
}

#[test]
fn empirical_g2_of_white_noise_is_flat() {
    let y = white(200_000, 1.0, 11);
    let g = empirical_g2(&y, 20).unwrap();
    let sq: Vec<f64> = y.values.iter().map(|v| v * v).collect();
    for k in 1..=20 {
        let prod: Vec<f64> = (0..y.len() - k).map(|i| sq[i] * sq[i + k]).collect();
        let se = std_error(&prod);
        assert!((g.values[k] - 1.0).abs() < 4.0 * se, "lag {k}: {} ± {se}", g.values[k]);
    }
}

/// Decay rate of `g2 - plateau` over the lags where it is still well above noise.
fn excess_rate(g: &ou_denoise::spectra::CorrelationCurve, tail: usize) -> f64 {
    let n = g.values.len();
    let plateau = mean(&g.values[n - tail..]);
    let excess: Vec<f64> = g.values.iter().map(|v| v - plateau).collect();
    let k = excess.iter().take_while(|e| **e > 0.1 * excess[1]).count().max(3);
    exponential_rate(&g.lags[1..k], &excess[1..k])
}

#[test]
fn multiplicative_g2_decays_at_twice_the_first_order_rate() {
    let noise = NoiseParams::new(0.0, 0.2).unwrap();
    let (mut second, mut first) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let x = ou(100_000, 0.05, seed);
        let y = add_noise(&x, &noise, 900 + seed);
        second.push(excess_rate(&empirical_g2(&y, 200).unwrap(), 50));
        let acf: Vec<f64> = (1..=40).map(|k| x.autocorrelation(k)).collect();
        let lags: Vec<f64> = (1..=40).map(|k| k as f64 * 0.05).collect();
        first.push(exponential_rate(&lags, &acf));
    }
    let (r2, r1) = (mean(&second), mean(&first));
    assert!((r1 - 1.0).abs() < 0.1, "first order rate {r1}");
    assert!((r2 / (2.0 * r1) - 1.0).abs() < 0.25, "second order rate {r2} vs 2 x {r1}");
}

#[test]
fn spectrum_csv_has_header_and_rows() {
    let s = periodogram(&white(16, 0.5, 1), Normalization::Raw).unwrap();
    let mut out = Vec::new();
    s.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("freq,power\n"));
    assert_eq!(text.lines().count(), 9);
    let g = empirical_g2(&white(16, 0.5, 1), 3).unwrap();
    let mut out = Vec::new();
    g.write_csv(&mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with("lag,value\n0,"));
}

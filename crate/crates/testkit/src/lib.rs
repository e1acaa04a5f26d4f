//! Brute-force reference computations for tests.
//!
//! Nothing here depends on the library under test: quadrature is done on
//! explicit grids, gradients by central differences, maximum likelihood by
//! grid search, and simulation by a separate exact AR(1) recursion.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Composite trapezoid rule on `n` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        s += f(lo + i as f64 * h);
    }
    s * h
}

/// Uniform 1-D grid with trapezoid weights.
#[derive(Debug, Clone)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, intervals: usize) -> Self {
        let h = (hi - lo) / intervals as f64;
        let nodes: Vec<f64> = (0..=intervals).map(|i| lo + i as f64 * h).collect();
        let mut weights = vec![h; intervals + 1];
        weights[0] *= 0.5;
        weights[intervals] *= 0.5;
        Self { nodes, weights }
    }
}

/// Moments of `p(x, y) ∝ N(x; mx, vx) N(y; b x, q) N(y; my, vy)` by 2-D quadrature.
/// Returns `(E[xy], mass)`.
pub fn bivariate_cross_moment_quadrature(mx: f64, vx: f64, my: f64, vy: f64, a: f64, b: f64) -> (f64, f64) {
    let q = a * (1.0 - b * b);
    let sx = vx.sqrt();
    let sy = vy.sqrt().min((q + b * b * vx).sqrt());
    let gx = Grid::new(mx - 12.0 * sx, mx + 12.0 * sx, 1200);
    let cy = my;
    let wy = 12.0 * vy.sqrt().max((q + b * b * vx).sqrt()) + (b * mx - my).abs();
    let gy = Grid::new(cy - wy, cy + wy, 2400.max((2.0 * wy / (0.02 * sy)) as usize));
    let (mut mass, mut exy) = (0.0, 0.0);
    for (x, wx) in gx.nodes.iter().zip(&gx.weights) {
        let lx = ln_normal(*x, mx, vx);
        for (y, wyy) in gy.nodes.iter().zip(&gy.weights) {
            let p = (lx + ln_normal(*y, b * x, q) + ln_normal(*y, my, vy)).exp() * wx * wyy;
            mass += p;
            exy += p * x * y;
        }
    }
    (exy / mass, mass)
}

/// Posterior summaries of a three-sample latent chain by dense grid quadrature.
#[derive(Debug, Clone)]
pub struct ThreePointPosterior {
    pub log_evidence: f64,
    pub mean: [f64; 3],
    pub var: [f64; 3],
    /// `E[x1 x2]`, `E[x2 x3]`
    pub cross: [f64; 2],
}

/// Joint `p(x, y) = N(x1; 0, A) Π N(x_{i+1}; B x_i, A(1-B²)) Π N(y_i; x_i, sn²)`
/// integrated over a cube around the data.
pub fn three_point_posterior(y: [f64; 3], a: f64, b: f64, sn: f64, intervals: usize) -> ThreePointPosterior {
    let q = a * (1.0 - b * b);
    let half = 10.0 * sn.min(a.sqrt());
    let grids: Vec<Grid> = y
        .iter()
        .map(|&yi| {
            // posterior sits between 0 and y_i
            let lo = yi.min(0.0) - half - 0.5;
            let hi = yi.max(0.0) + half + 0.5;
            Grid::new(lo, hi, intervals)
        })
        .collect();
    let sn2 = sn * sn;
    let obs: Vec<Vec<f64>> = grids
        .iter()
        .zip(&y)
        .map(|(g, &yi)| g.nodes.iter().map(|&x| ln_normal(yi, x, sn2)).collect())
        .collect();
    let mut mass = 0.0;
    let mut m1 = [0.0; 3];
    let mut m2 = [0.0; 3];
    let mut c = [0.0; 2];
    // shift the log-density to avoid underflow
    let shift = -(ln_normal(y[0], y[0], sn2) * 3.0);
    for (i, &x1) in grids[0].nodes.iter().enumerate() {
        let l1 = ln_normal(x1, 0.0, a) + obs[0][i];
        let w1 = grids[0].weights[i];
        for (j, &x2) in grids[1].nodes.iter().enumerate() {
            let l2 = l1 + ln_normal(x2, b * x1, q) + obs[1][j];
            let w12 = w1 * grids[1].weights[j];
            for (k, &x3) in grids[2].nodes.iter().enumerate() {
                let l = l2 + ln_normal(x3, b * x2, q) + obs[2][k] + shift;
                let p = l.exp() * w12 * grids[2].weights[k];
                mass += p;
                m1[0] += p * x1;
                m1[1] += p * x2;
                m1[2] += p * x3;
                m2[0] += p * x1 * x1;
                m2[1] += p * x2 * x2;
                m2[2] += p * x3 * x3;
                c[0] += p * x1 * x2;
                c[1] += p * x2 * x3;
            }
        }
    }
    let mean = [m1[0] / mass, m1[1] / mass, m1[2] / mass];
    let var = [
        m2[0] / mass - mean[0] * mean[0],
        m2[1] / mass - mean[1] * mean[1],
        m2[2] / mass - mean[2] * mean[2],
    ];
    ThreePointPosterior {
        log_evidence: mass.ln() - shift,
        mean,
        var,
        cross: [c[0] / mass, c[1] / mass],
    }
}

/// Central finite-difference gradient.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + step;
            let fp = f(&xp);
            xp[i] = orig - step;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Exact log-likelihood of a noiseless stationary AR(1) path.
pub fn ar1_loglik(x: &[f64], a: f64, b: f64) -> f64 {
    let q = a * (1.0 - b * b);
    let mut l = ln_normal(x[0], 0.0, a);
    for w in x.windows(2) {
        l += ln_normal(w[1], b * w[0], q);
    }
    l
}

/// Maximum of a unimodal `f` on `[lo, hi]` by repeated grid refinement.
fn refine_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, levels: usize) -> (f64, f64) {
    let n = 40;
    let mut best = (lo, f64::NEG_INFINITY);
    for _ in 0..levels {
        best.1 = f64::NEG_INFINITY;
        for i in 0..=n {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(t);
            if v > best.1 {
                best = (t, v);
            }
        }
        let h = (hi - lo) / n as f64 * 2.0;
        (lo, hi) = (best.0 - h, best.0 + h);
    }
    best
}

/// Maximum likelihood `(A, B)` for a noiseless path: grid refinement over
/// `ln A`, profiling `ln(-ln B)` by an inner grid refinement at each `A`.
pub fn ar1_mle_grid(x: &[f64]) -> (f64, f64) {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let to_b = |z: f64| (-z.exp()).exp();
    let profile = |u: f64| refine_max(|z| ar1_loglik(x, u.exp(), to_b(z)), -18.0, 5.0, 12);
    let (u, _) = refine_max(|u| profile(u).1, ms.ln() - 8.0, ms.ln() + 8.0, 12);
    (u.exp(), to_b(profile(u).0))
}

/// Exact AR(1) discretization of an OU process started at `x0`, sampled at the
/// increasing times `times`.
pub fn ou_path_at(times: &[f64], x0: f64, theta: f64, sigma: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut x) = (0.0, x0);
    for &s in times {
        let h = s - t;
        let decay = (-theta * h).exp();
        let var = sigma * sigma / (2.0 * theta) * (1.0 - (-2.0 * theta * h).exp());
        let z: f64 = StandardNormal.sample(rng);
        x = decay * x + var.sqrt() * z;
        out.push(x);
        t = s;
    }
    out
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

pub fn std_error(v: &[f64]) -> f64 {
    (variance(v) / v.len() as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Least-squares fit of `log P = log S0 - log(1 + (f/fc)²)`; returns `fc`.
pub fn lorentzian_corner(freqs: &[f64], power: &[f64]) -> f64 {
    let lp: Vec<f64> = power.iter().map(|p| p.ln()).collect();
    let cost = |fc: f64| {
        let r: Vec<f64> = freqs.iter().zip(&lp).map(|(f, l)| l + (1.0 + (f / fc).powi(2)).ln()).collect();
        let m = mean(&r);
        r.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let (lo, hi) = (freqs[0].ln() - 3.0, freqs[freqs.len() - 1].ln());
    let mut best = (f64::INFINITY, lo);
    let n = 2000;
    for i in 0..=n {
        let z = lo + (hi - lo) * i as f64 / n as f64;
        let c = cost(z.exp());
        if c < best.0 {
            best = (c, z);
        }
    }
    best.1.exp()
}

/// Fitted decay rate of `values ≈ c exp(-rate * lag)` by log-linear least squares
/// over strictly positive entries.
pub fn exponential_rate(lags: &[f64], values: &[f64]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = lags
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(l, v)| (*l, v.ln()))
        .unzip();
    -slope(&x, &y)
}

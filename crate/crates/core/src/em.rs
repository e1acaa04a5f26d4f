//! Expectation–maximization for `(A, tau, sigma_n)` under thermal noise.
//!
//! The E-step runs exact Gaussian forward (`alpha`) and backward (`beta`)
//! recursions over the latent chain; their products give the single-site
//! marginals and the pairwise moments `E[x_{n-1} x_n]`. The M-step updates
//! `sigma_n` in closed form and maximizes the expected complete-data
//! log-likelihood over `(A, B)` by profiling `A` out analytically and searching
//! over `B` in `(0, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{bivariate_cross_moment, product, propagate_through_transition, Gaussian1};
use crate::model::{marginal_loglik_additive, OuParams};
use crate::scalar::Real;
use crate::series::TimeSeries;

/// Backward message `beta(x_n)`; the last one is identically one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardMessage<T> {
    Flat,
    Gaussian(Gaussian1<T>),
}

impl<T: Real> BackwardMessage<T> {
    pub fn as_gaussian(&self) -> Option<&Gaussian1<T>> {
        match self {
            Self::Flat => None,
            Self::Gaussian(g) => Some(g),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Self::Flat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet<T> {
    pub alphas: Vec<Gaussian1<T>>,
    pub betas: Vec<BackwardMessage<T>>,
    /// `log p(y | theta)`
    pub loglik: T,
}

/// Sufficient statistics of the smoothed latent chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments<T> {
    pub mu: Vec<T>,
    pub var: Vec<T>,
    pub e_x1_sq: T,
    pub e_xn_sq: T,
    pub sum_e_x_sq: T,
    pub sum_e_xx_next: T,
}

impl<T: Real> PosteriorMoments<T> {
    /// Moments of a known latent path (zero posterior variance).
    pub fn from_path(x: &[T]) -> Self {
        let n = x.len();
        let sum_e_x_sq = x.iter().fold(T::zero(), |a, &v| a + v * v);
        let sum_e_xx_next = x.windows(2).fold(T::zero(), |a, w| a + w[0] * w[1]);
        Self {
            mu: x.to_vec(),
            var: vec![T::zero(); n],
            e_x1_sq: x[0] * x[0],
            e_xn_sq: x[n - 1] * x[n - 1],
            sum_e_x_sq,
            sum_e_xx_next,
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

fn check_sigma<T: Real>(sigma_n: T) -> Result<()> {
    if sigma_n > T::zero() && sigma_n.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("sigma_n must be positive, got {sigma_n}")))
    }
}

/// Observation likelihood `p(y_n | x_n)` seen as a function of `x_n`.
fn observation<T: Real>(y: T, sigma_n: T) -> Result<Gaussian1<T>> {
    Gaussian1::new(y, sigma_n * sigma_n)
}

/// Forward messages `alpha(x_n) = p(y_1..y_n, x_n)` and `log p(y)`.
pub fn forward_messages<T: Real>(
    y: &TimeSeries<T>,
    params: &OuParams<T>,
    sigma_n: T,
) -> Result<(Vec<Gaussian1<T>>, T)> {
    check_sigma(sigma_n)?;
    y.require_len(1)?;
    let decay = params.decay(y.dt);
    let prior = Gaussian1::new(T::zero(), params.amplitude)?;
    let mut alphas = Vec::with_capacity(y.len());
    let mut alpha = product(&prior, &observation(y.values[0], sigma_n)?)?;
    alphas.push(alpha);
    for &obs in &y.values[1..] {
        let predicted = propagate_through_transition(&alpha, params.amplitude, decay)?;
        alpha = product(&predicted, &observation(obs, sigma_n)?)?;
        alphas.push(alpha);
    }
    Ok((alphas, alpha.log_scale))
}

/// Backward messages `beta(x_n) = p(y_{n+1}..y_N | x_n)`.
pub fn backward_messages<T: Real>(
    y: &TimeSeries<T>,
    params: &OuParams<T>,
    sigma_n: T,
) -> Result<Vec<BackwardMessage<T>>> {
    check_sigma(sigma_n)?;
    y.require_len(1)?;
    let n = y.len();
    let decay = params.decay(y.dt);
    let q = params.transition_variance(y.dt);
    let ln_decay = decay.ln();
    let mut betas = vec![BackwardMessage::Flat; n];
    for i in (0..n - 1).rev() {
        let lifted = lift_backward(&betas[i + 1], y.values[i + 1], sigma_n)?;
        // ∫ g(x') N(x'; B x, q) dx' = exp(c) N(B x; m, v + q) = exp(c - ln B) N(x; m / B, (v + q) / B²)
        let var = (lifted.variance + q) / (decay * decay);
        betas[i] = BackwardMessage::Gaussian(Gaussian1 {
            mean: lifted.mean / decay,
            variance: var,
            log_scale: lifted.log_scale - ln_decay,
        });
    }
    Ok(betas)
}

/// `beta(x_n) p(y_n | x_n)` as a scaled Gaussian in `x_n`.
fn lift_backward<T: Real>(beta: &BackwardMessage<T>, y: T, sigma_n: T) -> Result<Gaussian1<T>> {
    let obs = observation(y, sigma_n)?;
    match beta {
        BackwardMessage::Flat => Ok(obs),
        BackwardMessage::Gaussian(g) => product(g, &obs),
    }
}

/// Runs both sweeps.
pub fn smooth<T: Real>(y: &TimeSeries<T>, params: &OuParams<T>, sigma_n: T) -> Result<MessageSet<T>> {
    let (alphas, loglik) = forward_messages(y, params, sigma_n)?;
    let betas = backward_messages(y, params, sigma_n)?;
    Ok(MessageSet { alphas, betas, loglik })
}

/// Single-site posteriors `p(x_n | y) ∝ alpha(x_n) beta(x_n)`, normalized.
pub fn posterior_marginals<T: Real>(
    alphas: &[Gaussian1<T>],
    betas: &[BackwardMessage<T>],
) -> Result<Vec<Gaussian1<T>>> {
    if alphas.len() != betas.len() {
        return Err(Error::DimensionMismatch { expected: alphas.len(), got: betas.len() });
    }
    alphas
        .iter()
        .zip(betas)
        .map(|(a, b)| match b {
            BackwardMessage::Flat => Ok(a.normalized()),
            BackwardMessage::Gaussian(g) => product(a, g).map(|p| p.normalized()),
        })
        .collect()
}

/// `E[x_{n-1} x_n | y]` for every consecutive pair (length `N - 1`).
pub fn pairwise_cross_moments<T: Real>(
    alphas: &[Gaussian1<T>],
    betas: &[BackwardMessage<T>],
    y: &TimeSeries<T>,
    params: &OuParams<T>,
    sigma_n: T,
) -> Result<Vec<T>> {
    let n = y.len();
    if alphas.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: alphas.len() });
    }
    if betas.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: betas.len() });
    }
    check_sigma(sigma_n)?;
    let decay = params.decay(y.dt);
    (1..n)
        .map(|i| {
            let right = lift_backward(&betas[i], y.values[i], sigma_n)?;
            let left = &alphas[i - 1];
            bivariate_cross_moment(left.mean, left.variance, right.mean, right.variance, params.amplitude, decay)
        })
        .collect()
}

/// E-step: posterior moments and `log p(y | theta)`.
pub fn posterior_moments<T: Real>(
    y: &TimeSeries<T>,
    params: &OuParams<T>,
    sigma_n: T,
) -> Result<(PosteriorMoments<T>, T)> {
    y.require_len(2)?;
    let msgs = smooth(y, params, sigma_n)?;
    let marg = posterior_marginals(&msgs.alphas, &msgs.betas)?;
    let pairs = pairwise_cross_moments(&msgs.alphas, &msgs.betas, y, params, sigma_n)?;
    let mu: Vec<T> = marg.iter().map(|g| g.mean).collect();
    let var: Vec<T> = marg.iter().map(|g| g.variance).collect();
    let sum_e_x_sq = marg.iter().fold(T::zero(), |a, g| a + g.second_moment());
    let moments = PosteriorMoments {
        e_x1_sq: marg[0].second_moment(),
        e_xn_sq: marg[marg.len() - 1].second_moment(),
        sum_e_x_sq,
        sum_e_xx_next: pairs.iter().fold(T::zero(), |a, &v| a + v),
        mu,
        var,
    };
    Ok((moments, msgs.loglik))
}

/// Sufficient statistics for the latent-chain part of the complete-data likelihood.
#[derive(Debug, Clone, Copy)]
struct ChainStats<T> {
    n: T,
    e_first: T,
    /// Σ_{i≥2} E[x_i²]
    sum_tail: T,
    /// Σ_{i≤N-1} E[x_i²]
    sum_head: T,
    cross: T,
}

impl<T: Real> ChainStats<T> {
    fn new(m: &PosteriorMoments<T>) -> Self {
        Self {
            n: T::from_count(m.len()),
            e_first: m.e_x1_sq,
            sum_tail: m.sum_e_x_sq - m.e_x1_sq,
            sum_head: m.sum_e_x_sq - m.e_xn_sq,
            cross: m.sum_e_xx_next,
        }
    }

    /// E Σ (x_{i+1} - B x_i)²
    fn residual(&self, b: T) -> T {
        self.sum_tail - T::two() * b * self.cross + b * b * self.sum_head
    }

    /// Maximizer in `A` for fixed decay `b`.
    fn amplitude_at(&self, b: T, one_minus_b2: T) -> T {
        (self.e_first + self.residual(b) / one_minus_b2) / self.n
    }

    /// Expected complete-data log-likelihood of the chain.
    fn q(&self, a: T, b: T, one_minus_b2: T) -> T {
        let half = T::half();
        let ln2pi = T::ln_two_pi();
        let m = self.n - T::one();
        -half * (ln2pi + a.ln()) - self.e_first / (T::two() * a)
            - half * m * (ln2pi + (a * one_minus_b2).ln())
            - self.residual(b) / (T::two() * a * one_minus_b2)
    }

    /// Hessian of `q` in `(A, B)`.
    fn hessian(&self, a: T, b: T) -> [[T; 2]; 2] {
        let two = T::two();
        let u = T::one() - b * b;
        let r = self.residual(b);
        let dr = -two * self.cross + two * self.sum_head * b;
        let ddr = two * self.sum_head;
        let g = r / u;
        let dg = dr / u + two * b * r / (u * u);
        let ddg = ddr / u + T::lit(4.0) * b * dr / (u * u) + T::lit(8.0) * b * b * r / (u * u * u) + two * r / (u * u);
        let m = self.n - T::one();
        let a2 = a * a;
        let haa = self.n / (two * a2) - (self.e_first + g) / (a2 * a);
        let hab = dg / (two * a2);
        let hbb = m * (T::one() + b * b) / (u * u) - ddg / (two * a);
        [[haa, hab], [hab, hbb]]
    }
}

/// Outcome of one maximization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStep<T> {
    pub params: OuParams<T>,
    pub sigma_n: T,
    /// The decay maximizer sat on the edge of the search range.
    pub at_boundary: bool,
}

// Search range for z = ln(dt / tau); B = exp(-e^z).
const Z_MIN: f64 = -16.0;
const Z_MAX: f64 = 5.0;
const Z_GRID: usize = 421;

/// Maximizes the expected complete-data log-likelihood given the E-step moments.
pub fn m_step<T: Real>(moments: &PosteriorMoments<T>, y: &TimeSeries<T>) -> Result<MStep<T>> {
    let n = moments.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: n });
    }
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    let resid = moments
        .mu
        .iter()
        .zip(&moments.var)
        .zip(&y.values)
        .fold(T::zero(), |acc, ((&m, &v), &obs)| acc + v + (obs - m) * (obs - m));
    let sigma_n = (resid / T::from_count(n)).sqrt();

    let stats = ChainStats::new(moments);
    let profile = |z: T| -> T {
        let rate = z.exp();
        let b = (-rate).exp();
        let u = -(-T::two() * rate).exp_m1();
        let a = stats.amplitude_at(b, u);
        if !(a > T::zero()) {
            return T::neg_infinity();
        }
        -T::half() * (stats.n * a.ln() + (stats.n - T::one()) * u.ln())
    };

    let (zmin, zmax) = (T::lit(Z_MIN), T::lit(Z_MAX));
    let step = (zmax - zmin) / T::from_count(Z_GRID - 1);
    let grid = |k: usize| zmin + step * T::from_count(k);
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for k in 0..Z_GRID {
        let v = profile(grid(k));
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    if !best_val.is_finite() {
        return Err(invalid("degenerate posterior moments in M-step"));
    }
    let at_boundary = best == 0 || best == Z_GRID - 1;
    let lo = grid(best.saturating_sub(1));
    let hi = grid((best + 1).min(Z_GRID - 1));
    let z = golden_max(&profile, lo, hi, T::lit(1e-12));

    let rate = z.exp();
    let b = (-rate).exp();
    let amplitude = stats.amplitude_at(b, -(-T::two() * rate).exp_m1());
    let params = OuParams::new(amplitude, y.dt / rate)?;
    Ok(MStep { params, sigma_n, at_boundary })
}

fn golden_max<T: Real>(f: &impl Fn(T) -> T, mut a: T, mut b: T, tol: T) -> T {
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        c
    } else {
        d
    }
}

/// Expected complete-data log-likelihood of the latent chain (`sigma_n` part excluded).
pub fn expected_chain_loglik<T: Real>(moments: &PosteriorMoments<T>, params: &OuParams<T>, dt: T) -> T {
    let stats = ChainStats::new(moments);
    stats.q(params.amplitude, params.decay(dt), params.transition_variance(dt) / params.amplitude)
}

/// Laplace standard deviations of `(A, tau)` from the curvature of the expected
/// complete-data log-likelihood.
pub fn laplace_uncertainty<T: Real>(moments: &PosteriorMoments<T>, params: &OuParams<T>, dt: T) -> (T, T) {
    let stats = ChainStats::new(moments);
    let b = params.decay(dt);
    let h = stats.hessian(params.amplitude, b);
    // covariance = (-H)^{-1}
    let (p, q, r) = (-h[0][0], -h[0][1], -h[1][1]);
    let det = p * r - q * q;
    if !(det > T::zero() && p > T::zero()) {
        return (T::nan(), T::nan());
    }
    let var_a = r / det;
    let var_b = p / det;
    let ln_b = b.ln();
    let dtau_db = dt / (b * ln_b * ln_b);
    (var_a.sqrt(), dtau_db.abs() * var_b.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// First start from data moments, later starts jittered.
    FromDataMoments,
    /// Every start jittered.
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig<T> {
    pub max_iters: usize,
    /// Relative change threshold on the log-likelihood and every parameter.
    pub tol: T,
    pub n_starts: usize,
    pub init: InitStrategy,
    /// Seed for jittered starts.
    pub seed: u64,
    /// Squared-extrapolation acceleration of the EM map.
    pub accelerate: bool,
}

impl<T: Real> Default for EmConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: T::lit(1e-8),
            n_starts: 3,
            init: InitStrategy::FromDataMoments,
            seed: 0,
            accelerate: true,
        }
    }
}

impl<T: Real> EmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero()) {
            return Err(invalid("tol must be positive"));
        }
        if self.max_iters == 0 || self.n_starts == 0 {
            return Err(invalid("max_iters and n_starts must be at least 1"));
        }
        Ok(())
    }
}

/// Point estimates with uncertainties and convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FitResult<T> {
    #[serde(flatten)]
    pub params: OuParams<T>,
    #[serde(rename = "sigma_N")]
    pub sigma_n: T,
    #[serde(rename = "dA")]
    pub d_amplitude: T,
    #[serde(rename = "dtau")]
    pub d_tau: T,
    #[serde(rename = "dsigma_N")]
    pub d_sigma_n: T,
    pub loglik: T,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    pub start_index: usize,
    /// `log p(y | theta_k)` for every visited iterate.
    #[serde(skip)]
    pub loglik_trace: Vec<T>,
}

/// Starting point `(A, B, sigma_n)` for start `index`.
pub fn initial_guess<T: Real>(y: &TimeSeries<T>, config: &EmConfig<T>, index: usize) -> (T, T, T) {
    let var = y.variance();
    let a0 = var;
    let b0 = y.autocorrelation(1).max(T::lit(0.05)).min(T::lit(0.95));
    let s0 = T::half() * var.sqrt();
    let jitter = config.init == InitStrategy::Randomized || index > 0;
    if !jitter {
        return (a0, b0, s0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(index as u64));
    let mut j = || T::lit(rng.random_range(0.5..2.0));
    let a = a0 * j();
    let b = (b0 * j()).max(T::lit(0.05)).min(T::lit(0.95));
    let s = s0 * j();
    (a, b, s)
}

/// Iterate in log coordinates `(ln A, ln tau, ln sigma_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Point<T> {
    params: OuParams<T>,
    sigma_n: T,
}

impl<T: Real> Point<T> {
    fn to_log(self) -> [T; 3] {
        [self.params.amplitude.ln(), self.params.tau.ln(), self.sigma_n.ln()]
    }

    fn from_log(u: [T; 3]) -> Result<Self> {
        Ok(Self { params: OuParams::new(u[0].exp(), u[1].exp())?, sigma_n: u[2].exp() })
    }

    fn settled(&self, other: &Self, tol: T, sigma_floor: T) -> bool {
        let rel = |n: T, o: T, floor: T| (n - o).abs() / o.abs().max(floor) <= tol;
        let tiny = T::min_positive_value();
        rel(self.params.amplitude, other.params.amplitude, tiny)
            && rel(self.params.tau, other.params.tau, tiny)
            && rel(self.sigma_n, other.sigma_n, sigma_floor)
    }
}

/// One E-step at `p` followed by one M-step.
struct EmMap<T> {
    loglik: T,
    next: Point<T>,
    at_boundary: bool,
}

fn em_map<T: Real>(y: &TimeSeries<T>, p: &Point<T>, sigma_min: T) -> Result<EmMap<T>> {
    let (moments, loglik) = posterior_moments(y, &p.params, p.sigma_n)?;
    let step = m_step(&moments, y)?;
    Ok(EmMap {
        loglik,
        next: Point { params: step.params, sigma_n: step.sigma_n.max(sigma_min) },
        at_boundary: step.at_boundary,
    })
}

/// The zero-noise solution: the AR(1) maximum likelihood on `y` itself.
/// Only returned when it is a local maximum of the likelihood, i.e. when the
/// likelihood does not grow as `sigma_n^2` leaves zero.
struct ZeroNoise<T: Real> {
    params: OuParams<T>,
    loglik: T,
    moments: PosteriorMoments<T>,
}

fn zero_noise_solution<T: Real>(y: &TimeSeries<T>) -> Result<Option<ZeroNoise<T>>> {
    let moments = PosteriorMoments::from_path(&y.values);
    let step = m_step(&moments, y)?;
    if step.at_boundary {
        return Ok(None);
    }
    let loglik = marginal_loglik_additive(y, &step.params, T::zero())?;
    let eps2 = T::lit(1e-8) * y.variance();
    let nudged = marginal_loglik_additive(y, &step.params, eps2.sqrt())?;
    if !(loglik.is_finite() && nudged <= loglik) {
        return Ok(None);
    }
    Ok(Some(ZeroNoise { params: step.params, loglik, moments }))
}

/// One EM run from a given start.
///
/// With `config.accelerate` set, each cycle takes two EM steps, extrapolates
/// along the squared-difference direction in log-parameter space and
/// stabilizes with a third EM step; when the extrapolated point loses
/// likelihood the cycle falls back to the plain two-step iterate, so the
/// likelihood trace stays non-decreasing.
///
/// EM approaches a `sigma_n = 0` maximum only sublinearly. Once the iterate
/// is small against the data scale and the zero-noise solution is at least as
/// likely, the run stops there with `sigma_n = 0`.
pub fn run_from<T: Real>(y: &TimeSeries<T>, config: &EmConfig<T>, start: (T, T, T), index: usize) -> Result<FitResult<T>> {
    let (a0, b0, s0) = start;
    let scale = y.variance().sqrt().max(T::min_positive_value());
    let sigma_min = T::lit(1e-10) * scale;
    // sigma_n changes below this are not resolvable against the data scale
    let sigma_floor = T::lit(1e-4) * scale;
    let mut point = Point { params: OuParams::new(a0, OuParams::tau_from_decay(b0, y.dt))?, sigma_n: s0.max(sigma_min) };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut evaluations = 0;
    let mut current = em_map(y, &point, sigma_min)?;
    evaluations += 1;
    let mut step_max = T::one();
    let zero = zero_noise_solution(y)?;
    let mut at_zero = false;

    while evaluations < config.max_iters {
        trace.push(current.loglik);
        if let Some(z) = &zero {
            if point.sigma_n < T::lit(0.1) * scale && z.loglik >= current.loglik {
                at_zero = true;
                converged = true;
                break;
            }
        }
        if current.at_boundary {
            point = current.next;
            break;
        }
        let (candidate, cand_map) = if config.accelerate {
            let p1 = current.next;
            let m1 = em_map(y, &p1, sigma_min)?;
            evaluations += 1;
            let p2 = m1.next;
            let u0 = point.to_log();
            let u1 = p1.to_log();
            let u2 = p2.to_log();
            let r: Vec<T> = (0..3).map(|k| u1[k] - u0[k]).collect();
            let v: Vec<T> = (0..3).map(|k| u2[k] - u1[k] - r[k]).collect();
            let norm = |w: &[T]| w.iter().fold(T::zero(), |a, &c| a + c * c).sqrt();
            let (nr, nv) = (norm(&r), norm(&v));
            let mut fallback = true;
            let mut chosen = (p2, None);
            if nv > T::zero() && !m1.at_boundary {
                let alpha = (-(nr / nv)).min(-T::one()).max(-step_max);
                let u: [T; 3] = std::array::from_fn(|k| u0[k] - T::two() * alpha * r[k] + alpha * alpha * v[k]);
                if let Ok(pe) = Point::from_log(u) {
                    if let Ok(me) = em_map(y, &pe, sigma_min) {
                        evaluations += 1;
                        if me.loglik.is_finite() && !me.at_boundary {
                            let stab = me.next;
                            if let Ok(ms) = em_map(y, &stab, sigma_min) {
                                evaluations += 1;
                                if ms.loglik >= current.loglik {
                                    fallback = false;
                                    if alpha == -step_max {
                                        step_max = step_max * T::lit(4.0);
                                    }
                                    chosen = (stab, Some(ms));
                                }
                            }
                        }
                    }
                }
            }
            if fallback {
                step_max = (step_max / T::lit(4.0)).max(T::one());
            }
            chosen
        } else {
            (current.next, None)
        };
        let next_map = match cand_map {
            Some(m) => m,
            None => {
                evaluations += 1;
                em_map(y, &candidate, sigma_min)?
            }
        };
        let ll_settled = (next_map.loglik - current.loglik).abs() <= config.tol * current.loglik.abs().max(T::one());
        let params_settled = candidate.settled(&point, config.tol, sigma_floor);
        point = candidate;
        current = next_map;
        if ll_settled && params_settled {
            converged = true;
            break;
        }
    }

    if let (true, Some(z)) = (at_zero, zero) {
        trace.push(z.loglik);
        let (d_amplitude, d_tau) = laplace_uncertainty(&z.moments, &z.params, y.dt);
        return Ok(FitResult {
            params: z.params,
            sigma_n: T::zero(),
            d_amplitude,
            d_tau,
            d_sigma_n: T::zero(),
            loglik: z.loglik,
            iterations: evaluations,
            converged: true,
            start_index: index,
            loglik_trace: trace,
        });
    }
    let (moments, loglik) = posterior_moments(y, &point.params, point.sigma_n)?;
    trace.push(loglik);
    let (d_amplitude, d_tau) = laplace_uncertainty(&moments, &point.params, y.dt);
    let d_sigma_n = point.sigma_n / (T::two() * T::from_count(y.len())).sqrt();
    Ok(FitResult {
        params: point.params,
        sigma_n: point.sigma_n,
        d_amplitude,
        d_tau,
        d_sigma_n,
        loglik,
        iterations: evaluations,
        converged: converged && loglik.is_finite(),
        start_index: index,
        loglik_trace: trace,
    })
}

/// Multi-start EM. Returns the best converged start by log-likelihood; if no
/// start converged, the best one is returned with `converged == false`.
pub fn fit<T: Real>(y: &TimeSeries<T>, config: &EmConfig<T>) -> Result<FitResult<T>> {
    config.validate()?;
    y.require_len(2)?;
    let runs: Vec<Result<FitResult<T>>> = (0..config.n_starts)
        .into_par_iter()
        .map(|i| run_from(y, config, initial_guess(y, config, i), i))
        .collect();
    let mut best: Option<FitResult<T>> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => (r.converged, r.loglik) > (b.converged, b.loglik) && !(b.converged && !r.converged),
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(invalid("no EM start produced a result")),
    }
}

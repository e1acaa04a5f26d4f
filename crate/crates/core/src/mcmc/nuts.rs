//! Multinomial no-U-turn sampler with a diagonal metric.
//!
//! Warmup adapts the step size by dual averaging and the metric from windowed
//! variance estimates (fast buffer, doubling slow windows, final fast buffer).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::target::LogDensity;
use crate::error::{invalid, Result};
use crate::scalar::log_add_exp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Initial step size; adapted during warmup.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { n_samples: 1000, n_warmup: 1000, target_accept: 0.8, max_tree_depth: 10, step_size: 1.0, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(invalid(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if self.max_tree_depth == 0 {
            return Err(invalid("max_tree_depth must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size must be positive"));
        }
        Ok(())
    }
}

/// Post-warmup draws of every coordinate plus per-transition statistics.
#[derive(Debug, Clone)]
pub struct RawChain {
    pub draws: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<usize>,
    pub accept_stat: Vec<f64>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub runtime_s: f64,
}

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, D> {
    target: &'a D,
    inv_metric: Vec<f64>,
}

impl<D: LogDensity> Hamiltonian<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * pi * m).sum::<f64>()
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.logp_grad(&z.q, &mut z.grad);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn refresh(&self, z: &mut Point, rng: &mut ChaCha8Rng) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct Transition<'a, 'b, D> {
    ham: &'b Hamiltonian<'a, D>,
    eps: f64,
    h0: f64,
    z: Point,
    rng: &'b mut ChaCha8Rng,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Ends of a subtree as seen by the caller.
struct Edge {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
}

impl<D: LogDensity> Transition<'_, '_, D> {
    /// Builds a subtree of `2^depth` leapfrog steps from the current state.
    /// Returns `None` on divergence or an internal U-turn.
    fn build_tree(
        &mut self,
        depth: usize,
        z_propose: &mut Point,
        rho: &mut [f64],
        log_sum_weight: &mut f64,
    ) -> Option<Edge> {
        if depth == 0 {
            self.ham.leapfrog(&mut self.z, self.eps);
            self.n_leapfrog += 1;
            let h = self.ham.energy(&self.z);
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            *z_propose = self.z.clone();
            for (r, p) in rho.iter_mut().zip(&self.z.p) {
                *r += p;
            }
            if self.divergent {
                return None;
            }
            let ps = self.ham.p_sharp(&self.z.p);
            return Some(Edge { p_sharp_beg: ps.clone(), p_sharp_end: ps, p_beg: self.z.p.clone(), p_end: self.z.p.clone() });
        }
        let dim = rho.len();
        let mut lsw_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; dim];
        let init = self.build_tree(depth - 1, z_propose, &mut rho_init, &mut lsw_init)?;

        let mut z_final = self.z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; dim];
        let fin = self.build_tree(depth - 1, &mut z_final, &mut rho_final, &mut lsw_final)?;

        let lsw_subtree = log_add_exp(lsw_init, lsw_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &add(&rho_init, &fin.p_beg));
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &add(&rho_final, &init.p_end));
        persist.then_some(Edge { p_sharp_beg: init.p_sharp_beg, p_sharp_end: fin.p_sharp_end, p_beg: init.p_beg, p_end: fin.p_end })
    }
}

struct Outcome {
    next: Point,
    accept_stat: f64,
    depth: usize,
    divergent: bool,
}

fn transition<D: LogDensity>(
    ham: &Hamiltonian<'_, D>,
    current: &Point,
    eps: f64,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let mut z0 = current.clone();
    ham.refresh(&mut z0, rng);
    let h0 = ham.energy(&z0);
    let ps0 = ham.p_sharp(&z0.p);

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut z_sample = z0.clone();
    let (mut p_sharp_fwd_fwd, mut p_sharp_fwd_bck) = (ps0.clone(), ps0.clone());
    let (mut p_sharp_bck_fwd, mut p_sharp_bck_bck) = (ps0.clone(), ps0);
    let (mut p_fwd_fwd, mut p_fwd_bck) = (z0.p.clone(), z0.p.clone());
    let (mut p_bck_fwd, mut p_bck_bck) = (z0.p.clone(), z0.p.clone());
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;
    let dim = rho.len();

    let mut tr = Transition { ham, eps, h0, z: z0, rng, n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
    let mut depth = 0;
    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let mut z_propose = tr.z.clone();
        let valid = if tr.rng.random::<f64>() > 0.5 {
            tr.z = z_fwd.clone();
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_fwd);
            p_sharp_bck_fwd.clone_from(&p_sharp_fwd_fwd);
            tr.eps = eps;
            let edge = tr.build_tree(depth, &mut z_propose, &mut rho_fwd, &mut lsw_subtree);
            z_fwd = tr.z.clone();
            edge.map(|e| {
                p_sharp_fwd_bck = e.p_sharp_beg;
                p_sharp_fwd_fwd = e.p_sharp_end;
                p_fwd_bck = e.p_beg;
                p_fwd_fwd = e.p_end;
            })
        } else {
            tr.z = z_bck.clone();
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_bck);
            p_sharp_fwd_bck.clone_from(&p_sharp_bck_bck);
            tr.eps = -eps;
            let edge = tr.build_tree(depth, &mut z_propose, &mut rho_bck, &mut lsw_subtree);
            z_bck = tr.z.clone();
            edge.map(|e| {
                p_sharp_bck_fwd = e.p_sharp_beg;
                p_sharp_bck_bck = e.p_sharp_end;
                p_bck_fwd = e.p_beg;
                p_bck_bck = e.p_end;
            })
        };
        if valid.is_none() {
            break;
        }
        depth += 1;
        if lsw_subtree > log_sum_weight || tr.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            z_sample = z_propose;
        }
        log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);
        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }
    let accept_stat = if tr.n_leapfrog > 0 { tr.sum_metro_prob / tr.n_leapfrog as f64 } else { 0.0 };
    Outcome { next: z_sample, accept_stat, depth, divergent: tr.divergent }
}

/// Dual averaging of `ln eps` towards a target acceptance statistic.
struct StepSizeAdapter {
    mu: f64,
    target: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), target, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule for the metric: which iterations feed the variance
/// estimate and where each slow window ends.
struct Windows {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_end: usize,
}

impl Windows {
    fn new(n_warmup: usize) -> Option<Self> {
        if n_warmup < 20 {
            return None;
        }
        let (mut init_buffer, mut term_buffer, mut base) = (75, 50, 25);
        if init_buffer + term_buffer + base > n_warmup {
            init_buffer = (0.15 * n_warmup as f64) as usize;
            term_buffer = (0.1 * n_warmup as f64) as usize;
            base = n_warmup - init_buffer - term_buffer;
        }
        Some(Self { n_warmup, init_buffer, term_buffer, window_size: base, next_end: init_buffer + base - 1 })
    }

    fn collecting(&self, it: usize) -> bool {
        it >= self.init_buffer && it < self.n_warmup - self.term_buffer
    }

    fn ends_window(&self, it: usize) -> bool {
        it == self.next_end
    }

    fn advance(&mut self, it: usize) {
        let last = self.n_warmup - self.term_buffer - 1;
        if self.next_end == last {
            return;
        }
        self.window_size *= 2;
        self.next_end = it + self.window_size;
        if self.next_end != last && self.next_end + 2 * self.window_size >= self.n_warmup - self.term_buffer {
            self.next_end = last;
        }
    }
}

/// Running mean and variance (Welford).
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk towards `1e-3`.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|s| (n / (n + 5.0)) * (s / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0))).collect()
    }
}

/// Doubles or halves `eps` until one leapfrog step crosses acceptance 0.8.
fn init_step_size<D: LogDensity>(ham: &Hamiltonian<'_, D>, start: &Point, mut eps: f64, rng: &mut ChaCha8Rng) -> f64 {
    let probe = |eps: f64, rng: &mut ChaCha8Rng| {
        let mut z = start.clone();
        ham.refresh(&mut z, rng);
        let h0 = ham.energy(&z);
        ham.leapfrog(&mut z, eps);
        h0 - ham.energy(&z)
    };
    let threshold = 0.8f64.ln();
    let up = probe(eps, rng) > threshold;
    loop {
        let dh = probe(eps, rng);
        if (up && !(dh > threshold)) || (!up && !(dh < threshold)) {
            return eps;
        }
        eps = if up { 2.0 * eps } else { 0.5 * eps };
        if !(eps < 1e7 && eps > 1e-300) {
            return if up { 1e7 } else { 1e-300 };
        }
    }
}

/// Runs warmup and sampling from `init`.
pub fn sample<D: LogDensity>(target: &D, init: &[f64], config: &SamplerConfig) -> Result<RawChain> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(crate::Error::DimensionMismatch { expected: dim, got: init.len() });
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; dim];
    let logp = target.logp_grad(init, &mut grad);
    if !logp.is_finite() {
        return Err(invalid("initial point has zero posterior density"));
    }
    let mut z = Point { q: init.to_vec(), p: vec![0.0; dim], grad, logp };
    let mut ham = Hamiltonian { target, inv_metric: vec![1.0; dim] };

    // without warmup the configured step size is used as is
    let mut eps = if config.n_warmup > 0 { init_step_size(&ham, &z, config.step_size, &mut rng) } else { config.step_size };
    let mut adapter = StepSizeAdapter::new(eps, config.target_accept);
    let mut windows = Windows::new(config.n_warmup);
    let mut estimator = Welford::new(dim);

    for it in 0..config.n_warmup {
        let out = transition(&ham, &z, eps, config.max_tree_depth, &mut rng);
        z = out.next;
        eps = adapter.learn(out.accept_stat);
        if let Some(w) = windows.as_mut() {
            if w.collecting(it) {
                estimator.add(&z.q);
            }
            if w.ends_window(it) {
                w.advance(it);
                ham.inv_metric = estimator.regularized_variance();
                estimator = Welford::new(dim);
                eps = init_step_size(&ham, &z, eps, &mut rng);
                adapter = StepSizeAdapter::new(eps, config.target_accept);
            }
        }
    }
    if config.n_warmup > 0 {
        eps = adapter.final_step();
    }

    let mut chain = RawChain {
        draws: Vec::with_capacity(config.n_samples),
        divergent: Vec::with_capacity(config.n_samples),
        tree_depth: Vec::with_capacity(config.n_samples),
        accept_stat: Vec::with_capacity(config.n_samples),
        step_size: eps,
        inv_metric: ham.inv_metric.clone(),
        runtime_s: 0.0,
    };
    for _ in 0..config.n_samples {
        let out = transition(&ham, &z, eps, config.max_tree_depth, &mut rng);
        z = out.next;
        chain.draws.push(z.q.clone());
        chain.divergent.push(out.divergent);
        chain.tree_depth.push(out.depth);
        chain.accept_stat.push(out.accept_stat);
    }
    chain.runtime_s = started.elapsed().as_secs_f64();
    Ok(chain)
}

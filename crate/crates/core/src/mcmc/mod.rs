//! Hamiltonian Monte Carlo over the latent path and the parameters.

pub mod diagnostics;
pub mod nuts;
pub mod target;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use diagnostics::ParamSummary;
pub use nuts::{sample, RawChain, SamplerConfig};
pub use target::{build_target, Bounds, LatentCoords, LogDensity, ModelSpec, NoiseMode, OuTarget, ParamPoint, PriorBox};

use crate::em;
use crate::error::{invalid, Result};
use crate::model::add_noise;
use crate::{EmConfig, NoiseParams, NoiseRatio, OuParams, TimeSeries};

/// Share of divergent transitions above which a chain is flagged.
pub const DIVERGENCE_ALERT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub ess: BTreeMap<String, f64>,
    pub rhat: BTreeMap<String, f64>,
    pub divergences: usize,
    pub divergence_alert: bool,
    pub runtime_s: f64,
    pub step_size: f64,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
    pub seed: u64,
    pub config: SamplerConfig,
    pub spec: ModelSpec,
}

/// Parameter view of a chain: one row per retained draw, columns
/// `A, tau, sigma_N, sigma_M` (derived or fixed ones included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub param_names: Vec<String>,
    pub draws: Vec<[f64; 4]>,
    pub latent_mean: Vec<f64>,
    pub summaries: Vec<ParamSummary>,
    pub diagnostics: ChainDiagnostics,
}

impl Chain {
    fn from_raw(target: &OuTarget, raw: &RawChain, spec: &ModelSpec, config: &SamplerConfig) -> Self {
        let n = target.len();
        let draws: Vec<[f64; 4]> = raw
            .draws
            .iter()
            .map(|q| {
                let p = target.project(q);
                [p.params.amplitude, p.params.tau, p.noise.sigma_n, p.noise.sigma_m]
            })
            .collect();
        let mut latent_mean = vec![0.0; n];
        for q in &raw.draws {
            for (m, v) in latent_mean.iter_mut().zip(target.path(q)) {
                *m += v;
            }
        }
        latent_mean.iter_mut().for_each(|m| *m /= raw.draws.len() as f64);
        let names = OuTarget::param_names();
        let summaries: Vec<ParamSummary> = names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
                ParamSummary::of(name, &col)
            })
            .collect();
        let divergences = raw.divergent.iter().filter(|d| **d).count();
        let len = raw.draws.len() as f64;
        let diagnostics = ChainDiagnostics {
            ess: summaries.iter().map(|s| (s.name.clone(), s.ess)).collect(),
            rhat: summaries.iter().map(|s| (s.name.clone(), s.rhat)).collect(),
            divergences,
            divergence_alert: divergences as f64 > DIVERGENCE_ALERT * len,
            runtime_s: raw.runtime_s,
            step_size: raw.step_size,
            mean_accept: raw.accept_stat.iter().sum::<f64>() / len,
            mean_tree_depth: raw.tree_depth.iter().sum::<usize>() as f64 / len,
            seed: config.seed,
            config: config.clone(),
            spec: spec.clone(),
        };
        Self { param_names: names.iter().map(|s| s.to_string()).collect(), draws, latent_mean, summaries, diagnostics }
    }

    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn amplitude(&self) -> &ParamSummary {
        &self.summaries[0]
    }

    pub fn tau(&self) -> &ParamSummary {
        &self.summaries[1]
    }

    pub fn sigma_n(&self) -> &ParamSummary {
        &self.summaries[2]
    }

    pub fn sigma_m(&self) -> &ParamSummary {
        &self.summaries[3]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.diagnostics.divergences as f64 / self.draws.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.param_names).map_err(csv_err)?;
        for d in &self.draws {
            out.write_record(d.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_diagnostics_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.diagnostics)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Parse(e.to_string())
}

/// Keeps `v` strictly inside `(b.lo, b.hi]`.
fn clamp_into(v: f64, b: &Bounds) -> f64 {
    let lo = b.lo + 1e-3 * (b.hi - b.lo);
    let hi = b.hi - 1e-3 * (b.hi - b.lo);
    if v.is_finite() {
        v.clamp(lo, hi)
    } else {
        0.5 * (b.lo + b.hi)
    }
}

/// Starting parameters: from a short EM fit when the model has thermal noise,
/// from data moments otherwise. Always inside the prior box.
pub fn initial_params(y: &TimeSeries, target: &OuTarget, rho: f64) -> ParamPoint {
    let sd = y.variance().sqrt();
    let acf = y.autocorrelation(1).clamp(0.05, 0.95);
    let mut params = OuParams { amplitude: y.variance(), tau: OuParams::tau_from_decay(acf, y.dt) };
    let mut noise = NoiseParams { sigma_n: 0.3 * sd, sigma_m: 0.2 };
    if target.mode().has_sigma_n() {
        let config = EmConfig { n_starts: 1, ..EmConfig::default() };
        if let Ok(r) = em::fit(y, &config) {
            params = r.params;
            let total = if r.sigma_n > 0.0 { r.sigma_n } else { 0.1 * sd };
            noise.sigma_n = total / (1.0 + rho).sqrt();
        }
    }
    let pr = target.priors();
    params.amplitude = clamp_into(params.amplitude, &pr.amplitude);
    params.tau = clamp_into(params.tau, &pr.tau);
    noise.sigma_n = clamp_into(noise.sigma_n, &pr.sigma_n);
    noise.sigma_m = clamp_into(noise.sigma_m, &pr.sigma_m);
    ParamPoint { params, noise }
}

/// Samples the posterior of `y` under `spec`, starting the latents at `y`.
pub fn fit(y: &TimeSeries, spec: &ModelSpec, config: &SamplerConfig) -> Result<Chain> {
    let target = build_target(y, spec)?;
    let rho = spec.known_ratio.map_or(0.0, |r| r.get());
    let init = initial_params(y, &target, rho);
    fit_from(y, spec, config, &init)
}

/// As [`fit`] with explicit starting parameters.
pub fn fit_from(y: &TimeSeries, spec: &ModelSpec, config: &SamplerConfig, init: &ParamPoint) -> Result<Chain> {
    let target = build_target(y, spec)?;
    let q0 = target.embed(&y.values, init)?;
    let raw = sample(&target, &q0, config)?;
    Ok(Chain::from_raw(&target, &raw, spec, config))
}

/// Mixed thermal and multiplicative noise with the ratio held fixed.
pub fn fit_known_ratio(y: &TimeSeries, rho: NoiseRatio, config: &SamplerConfig) -> Result<Chain> {
    fit(y, &ModelSpec::known_ratio(rho), config)
}

/// Thermal standard deviation that has to be added so that a series with
/// thermal noise `sigma_n` at ratio `rho_measured` ends up at `rho_target`.
pub fn added_noise_sigma(sigma_n: f64, rho_measured: NoiseRatio, rho_target: NoiseRatio) -> Result<f64> {
    let (m, t) = (rho_measured.get(), rho_target.get());
    if !(t < m) {
        return Err(invalid(format!("target ratio {t} must be below the measured ratio {m}")));
    }
    if !(t > 0.0) {
        return Err(invalid("target ratio must be positive"));
    }
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(invalid(format!("sigma_n must be non-negative, got {sigma_n}")));
    }
    Ok(sigma_n * (m / t - 1.0).sqrt())
}

/// Adds white noise to `y` to lower its noise ratio to `rho_target`.
pub fn augment_noise(
    y: &TimeSeries,
    sigma_n: f64,
    rho_measured: NoiseRatio,
    rho_target: NoiseRatio,
    seed: u64,
) -> Result<TimeSeries> {
    let extra = added_noise_sigma(sigma_n, rho_measured, rho_target)?;
    Ok(add_noise(y, &NoiseParams::thermal(extra)?, seed))
}

/// Lowers the noise ratio with artificial thermal noise, then fits with the
/// target ratio as the known constant. The added noise is seeded from
/// `config.seed`.
pub fn add_artificial_noise_then_fit(
    y: &TimeSeries,
    sigma_n: f64,
    rho_measured: NoiseRatio,
    rho_target: NoiseRatio,
    config: &SamplerConfig,
) -> Result<Chain> {
    let noisier = augment_noise(y, sigma_n, rho_measured, rho_target, config.seed ^ 0x5eed_a11d)?;
    fit_known_ratio(&noisier, rho_target, config)
}

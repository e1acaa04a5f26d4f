use std::io::Write;

use anyhow::{Context, Result};
use serde_json::json;

use ou_denoise::mcmc::{self, Chain, ModelSpec, NoiseMode, SamplerConfig};
use ou_denoise::{em, EmConfig, FitResult, NoiseRatio, TimeSeries};

use crate::args::{Command, FitArgs, Method, Noise, SamplerArgs};
use crate::manifest::Run;
use crate::table::{num, write_rows};
use crate::{usage, Outcome};

/// Largest split-R̂ accepted for a sampled parameter.
pub const RHAT_LIMIT: f64 = 1.1;

pub fn sampler_config(args: &SamplerArgs, seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_samples: args.samples,
        n_warmup: args.warmup,
        target_accept: args.target_accept,
        seed,
        ..SamplerConfig::default()
    }
}

pub fn model_spec(noise: Noise, ratio: Option<f64>) -> Result<ModelSpec> {
    match (noise, ratio) {
        (Noise::MixedKnownRatio, Some(r)) => Ok(ModelSpec::known_ratio(NoiseRatio::new(r)?)),
        (Noise::MixedKnownRatio, None) => Err(usage("--noise mixed-known-ratio needs --ratio")),
        (_, Some(_)) => Err(usage("--ratio only applies to --noise mixed-known-ratio")),
        (n, None) => Ok(ModelSpec::new(n.into())),
    }
}

/// No divergence alert and every sampled parameter below [`RHAT_LIMIT`].
pub fn chain_converged(chain: &Chain) -> bool {
    let mode = chain.diagnostics.spec.noise_mode;
    let mut sampled = vec!["A", "tau"];
    if mode.has_sigma_n() {
        sampled.push("sigma_N");
    }
    if mode.has_free_sigma_m() {
        sampled.push("sigma_M");
    }
    !chain.diagnostics.divergence_alert
        && sampled.iter().all(|p| chain.diagnostics.rhat.get(*p).is_some_and(|r| *r < RHAT_LIMIT))
}

pub fn em_fit(y: &TimeSeries, max_iters: usize, seed: u64) -> Result<FitResult> {
    let config = EmConfig { max_iters, seed, ..EmConfig::default() };
    Ok(em::fit(y, &config)?)
}

fn write_em<W: Write>(w: W, r: &FitResult) -> Result<()> {
    let header = ["A", "tau", "sigma_N", "dA", "dtau", "dsigma_N", "loglik", "iterations", "converged"];
    let row = vec![
        num(r.params.amplitude),
        num(r.params.tau),
        num(r.sigma_n),
        num(r.d_amplitude),
        num(r.d_tau),
        num(r.d_sigma_n),
        num(r.loglik),
        r.iterations.to_string(),
        r.converged.to_string(),
    ];
    write_rows(w, &header, [row])
}

fn write_summary<W: Write>(w: W, chain: &Chain) -> Result<()> {
    let header = ["name", "mean", "sd", "q025", "q975", "ess", "rhat"];
    let rows = chain.summaries.iter().map(|s| {
        vec![s.name.clone(), num(s.mean), num(s.sd), num(s.q025), num(s.q975), num(s.ess), num(s.rhat)]
    });
    write_rows(w, &header, rows)
}

pub fn run(args: &FitArgs) -> Result<Outcome> {
    let y = TimeSeries::load(&args.input).with_context(|| format!("loading {}", args.input.display()))?;
    let command = Command::Fit(args.clone());
    match args.method {
        Method::Em => {
            if args.noise != Noise::Additive {
                return Err(usage(
                    "EM handles thermal (additive) noise only; use --method mcmc for multiplicative or mixed noise",
                ));
            }
            if args.ratio.is_some() {
                return Err(usage("--ratio only applies to --method mcmc --noise mixed-known-ratio"));
            }
            let r = em_fit(&y, args.max_iters, args.seed)?;
            let mut run = Run::start(&args.out.out_dir)?;
            serde_json::to_writer_pretty(run.create("fit_em.json")?, &r)?;
            write_em(run.create("fit_em.csv")?, &r)?;
            let path = run.finish(&command, vec![args.seed], json!({ "converged": r.converged }))?;
            println!(
                "A = {:.4} ± {:.4}, tau = {:.4} ± {:.4}, sigma_N = {:.4} ({} E-steps)",
                r.params.amplitude, r.d_amplitude, r.params.tau, r.d_tau, r.sigma_n, r.iterations
            );
            println!("wrote {}", path.display());
            Ok(if r.converged { Outcome::Ok } else { Outcome::NotConverged })
        }
        Method::Mcmc => {
            let spec = model_spec(args.noise, args.ratio)?;
            let chain = mcmc::fit(&y, &spec, &sampler_config(&args.sampler, args.seed))?;
            let converged = chain_converged(&chain);
            let mut run = Run::start(&args.out.out_dir)?;
            chain.write_csv(run.create("chain.csv")?)?;
            write_summary(run.create("chain_summary.csv")?, &chain)?;
            chain.write_diagnostics_json(run.create("chain_diagnostics.json")?)?;
            TimeSeries::new(y.dt, chain.latent_mean.clone())?.write_csv(run.create("latent_mean.csv")?)?;
            let meta = json!({
                "converged": converged,
                "divergences": chain.diagnostics.divergences,
                "noise_mode": spec.noise_mode,
            });
            let path = run.finish(&command, vec![args.seed], meta)?;
            for s in &chain.summaries {
                if s.name != "sigma_M" || spec.noise_mode != NoiseMode::AdditiveOnly {
                    println!("{:8} {:.4} ± {:.4} (ess {:.0}, rhat {:.3})", s.name, s.mean, s.sd, s.ess, s.rhat);
                }
            }
            println!("wrote {}", path.display());
            Ok(if converged { Outcome::Ok } else { Outcome::NotConverged })
        }
    }
}

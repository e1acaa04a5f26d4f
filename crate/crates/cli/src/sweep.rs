use std::time::Instant;

use anyhow::Result;
use rayon::prelude::*;
use serde_json::json;

use ou_denoise::mcmc::{self, diagnostics::quantile};
use ou_denoise::{NoiseParams, NoiseRatio};

use crate::args::{Command, Estimators, SignalArgs, SweepArgs, SweepVariable};
use crate::fit::{chain_converged, em_fit, model_spec, sampler_config};
use crate::manifest::Run;
use crate::simulate::draw;
use crate::table::{num, write_rows};
use crate::{args::Noise, usage, Outcome};

const HEADER: [&str; 13] = [
    "grid_value", "replicate", "seed", "estimator", "status", "A_hat", "dA", "tau_hat", "dtau", "sigma_n_hat",
    "sigma_m_hat", "covered", "runtime_s",
];

pub fn default_grid(variable: SweepVariable) -> Vec<f64> {
    match variable {
        SweepVariable::DtOverTau => vec![0.05, 0.1, 0.5, 1.0, 2.0, 4.0],
        SweepVariable::NoiseRatio => (0..9).map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 8.0)).collect(),
    }
}

#[derive(Debug, Clone)]
struct Row {
    grid_value: f64,
    replicate: usize,
    seed: u64,
    estimator: &'static str,
    status: String,
    est: [f64; 6],
    covered: bool,
    runtime_s: f64,
}

impl Row {
    fn cells(&self) -> Vec<String> {
        let mut c = vec![num(self.grid_value), self.replicate.to_string(), self.seed.to_string()];
        c.push(self.estimator.to_string());
        c.push(self.status.clone());
        c.extend(self.est.iter().map(|v| num(*v)));
        c.push(self.covered.to_string());
        c.push(num(self.runtime_s));
        c
    }
}

struct Task {
    grid_value: f64,
    replicate: usize,
    seed: u64,
}

fn estimate(args: &SweepArgs, task: &Task, estimator: &'static str) -> Row {
    let started = Instant::now();
    let result = fit_one(args, task, estimator);
    let mut row = Row {
        grid_value: task.grid_value,
        replicate: task.replicate,
        seed: task.seed,
        estimator,
        status: String::new(),
        est: [f64::NAN; 6],
        covered: false,
        runtime_s: started.elapsed().as_secs_f64(),
    };
    match result {
        Ok((est, converged)) => {
            row.status = if converged { "ok" } else { "not-converged" }.to_string();
            row.covered = (est[0] - args.amplitude).abs() <= 3.0 * est[1];
            row.est = est;
        }
        Err(e) => row.status = format!("error: {e:#}"),
    }
    row
}

/// `[A, dA, tau, dtau, sigma_n, sigma_m]` and the convergence flag.
fn fit_one(args: &SweepArgs, task: &Task, estimator: &str) -> Result<([f64; 6], bool)> {
    let (dt_over_tau, noise, ratio) = match args.variable {
        SweepVariable::DtOverTau => (task.grid_value, NoiseParams::thermal(args.total_noise)?, None),
        SweepVariable::NoiseRatio => {
            let rho = NoiseRatio::new(task.grid_value)?;
            (args.dt_over_tau, NoiseParams::from_total(args.total_noise, rho, args.amplitude)?, Some(task.grid_value))
        }
    };
    let signal = SignalArgs { amplitude: args.amplitude, tau: args.tau, dt: dt_over_tau * args.tau, n: args.n };
    let (_, y) = draw(&signal, &noise, task.seed)?;
    if estimator == "em" {
        let r = em_fit(&y, 500, task.seed)?;
        let est = [r.params.amplitude, r.d_amplitude, r.params.tau, r.d_tau, r.sigma_n, 0.0];
        return Ok((est, r.converged));
    }
    let mode = if ratio.is_some() { Noise::MixedKnownRatio } else { Noise::Additive };
    let chain = mcmc::fit(&y, &model_spec(mode, ratio)?, &sampler_config(&args.sampler, task.seed))?;
    let (a, t) = (chain.amplitude(), chain.tau());
    let est = [a.mean, a.sd, t.mean, t.sd, chain.sigma_n().mean, chain.sigma_m().mean];
    Ok((est, chain_converged(&chain)))
}

fn rollup(rows: &[Row]) -> Vec<Vec<String>> {
    let mut keys: Vec<(f64, &str)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(g, e)| *g == r.grid_value && *e == r.estimator) {
            keys.push((r.grid_value, r.estimator));
        }
    }
    keys.into_iter()
        .map(|(g, e)| {
            let group: Vec<&Row> = rows.iter().filter(|r| r.grid_value == g && r.estimator == e).collect();
            let finite = |k: usize| -> Vec<f64> { group.iter().map(|r| r.est[k]).filter(|v| v.is_finite()).collect() };
            let q = |v: &[f64], p: f64| if v.is_empty() { f64::NAN } else { quantile(v, p) };
            let (a, da, t, dt) = (finite(0), finite(1), finite(2), finite(3));
            let ok = group.iter().filter(|r| r.status == "ok").count();
            let covered = group.iter().filter(|r| r.covered).count() as f64 / group.len() as f64;
            vec![
                num(g),
                e.to_string(),
                group.len().to_string(),
                ok.to_string(),
                num(q(&a, 0.5)),
                num(q(&a, 0.25)),
                num(q(&a, 0.75)),
                num(q(&da, 0.5)),
                num(q(&t, 0.5)),
                num(q(&t, 0.25)),
                num(q(&t, 0.75)),
                num(q(&dt, 0.5)),
                num(covered),
            ]
        })
        .collect()
}

pub fn run(args: &SweepArgs) -> Result<Outcome> {
    let grid = args.grid.clone().unwrap_or_else(|| default_grid(args.variable));
    if grid.is_empty() {
        return Err(usage("sweep grid is empty"));
    }
    if args.replicates == 0 {
        return Err(usage("--replicates must be at least 1"));
    }
    if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(usage(format!("grid values must be finite and non-negative, got {v}")));
    }
    let estimators: Vec<&'static str> = match (args.variable, args.method) {
        (SweepVariable::NoiseRatio, _) | (_, Estimators::Mcmc) => vec!["mcmc"],
        (_, Estimators::Em) => vec!["em"],
        (_, Estimators::Both) => vec!["em", "mcmc"],
    };
    let tasks: Vec<Task> = grid
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| {
            (0..args.replicates).map(move |r| Task {
                grid_value: *g,
                replicate: r,
                seed: args.seed.wrapping_add((gi * args.replicates + r) as u64),
            })
        })
        .collect();
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let rows: Vec<Row> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| estimators.iter().map(|e| estimate(args, t, e)).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });

    let name = match args.variable {
        SweepVariable::DtOverTau => "sweep_dt_over_tau",
        SweepVariable::NoiseRatio => "sweep_noise_ratio",
    };
    let mut run = Run::start(&args.out.out_dir)?;
    write_rows(run.create(&format!("{name}.csv"))?, &HEADER, rows.iter().map(Row::cells))?;
    let rollup_header = [
        "grid_value", "estimator", "runs", "ok", "A_median", "A_q25", "A_q75", "dA_median", "tau_median", "tau_q25",
        "tau_q75", "dtau_median", "covered_fraction",
    ];
    write_rows(run.create(&format!("{name}_rollup.csv"))?, &rollup_header, rollup(&rows))?;
    let failed = rows.iter().filter(|r| r.status.starts_with("error")).count();
    let meta = json!({ "grid": grid, "rows": rows.len(), "errors": failed, "jobs": jobs });
    let seeds = tasks.iter().map(|t| t.seed).collect();
    let path = run.finish(&Command::Sweep(args.clone()), seeds, meta)?;
    println!("{} rows ({failed} errors), wrote {}", rows.len(), path.display());
    Ok(Outcome::Ok)
}

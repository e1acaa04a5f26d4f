use anyhow::Result;
use serde_json::json;

use ou_denoise::model::{add_noise, simulate_latent};
use ou_denoise::{NoiseParams, OuParams, TimeSeries};

use crate::args::{Command, SignalArgs, SimulateArgs};
use crate::manifest::Run;
use crate::Outcome;

/// Seed of the measurement noise drawn on top of a latent path seeded with `seed`.
pub fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Latent path and its observation for one seed.
pub fn draw(signal: &SignalArgs, noise: &NoiseParams, seed: u64) -> Result<(TimeSeries, TimeSeries)> {
    let params = OuParams::new(signal.amplitude, signal.tau)?;
    let x = simulate_latent(&params, signal.n, signal.dt, seed)?;
    let y = add_noise(&x, noise, noise_seed(seed));
    Ok((x, y))
}

pub fn run(args: &SimulateArgs) -> Result<Outcome> {
    let noise = NoiseParams::new(args.sigma_n, args.sigma_m)?;
    let (x, y) = draw(&args.signal, &noise, args.seed)?;
    let mut run = Run::start(&args.out.out_dir)?;
    x.write_csv(run.create("latent.csv")?)?;
    y.write_csv(run.create("observed.csv")?)?;
    let meta = json!({
        "latent_variance": x.variance(),
        "observed_variance": y.variance(),
        "noise_seed": noise_seed(args.seed),
    });
    let path = run.finish(&Command::Simulate(args.clone()), vec![args.seed, noise_seed(args.seed)], meta)?;
    println!("wrote {}", path.display());
    Ok(Outcome::Ok)
}

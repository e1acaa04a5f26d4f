use anyhow::Result;
use serde_json::{json, Map, Value};

use ou_denoise::spectra::{
    exponential_covariance_spectrum, ou_second_order_spectrum, power_spectrum, second_order_spectrum, Estimator,
    Normalization, Spectrum,
};
use ou_denoise::NoiseParams;

use crate::args::{Command, SpectraArgs};
use crate::manifest::Run;
use crate::simulate::draw;
use crate::table::{num, write_rows};
use crate::{usage, Outcome};

/// Averages spectra on a shared frequency grid.
fn average(spectra: Vec<Spectrum>) -> Spectrum {
    let k = spectra.len() as f64;
    let mut it = spectra.into_iter();
    let mut acc = it.next().expect("at least one replicate");
    for s in it {
        acc.power.iter_mut().zip(s.power).for_each(|(a, p)| *a += p);
    }
    acc.power.iter_mut().for_each(|p| *p /= k);
    acc
}

fn rows(s: &Spectrum, analytic: Option<&[f64]>) -> Vec<Vec<String>> {
    (0..s.len())
        .map(|i| {
            let mut r = vec![num(s.freqs[i]), num(s.power[i])];
            if let Some(a) = analytic {
                r.push(num(a[i]));
            }
            r
        })
        .collect()
}

pub fn run(args: &SpectraArgs) -> Result<Outcome> {
    if args.replicates == 0 {
        return Err(usage("--replicates must be at least 1"));
    }
    let estimator = if args.welch { Estimator::welch() } else { Estimator::Periodogram };
    let cases = [
        ("ou", NoiseParams::new(0.0, 0.0)?),
        ("thermal", NoiseParams::new(args.sigma_n, 0.0)?),
        ("multiplicative", NoiseParams::new(0.0, args.sigma_m)?),
    ];
    let sig = &args.signal;
    let mut run = Run::start(&args.out.out_dir)?;
    let mut meta = Map::new();
    for (case, noise) in cases {
        let (mut first, mut second) = (Vec::new(), Vec::new());
        let (mut var1, mut var2) = (0.0, 0.0);
        for r in 0..args.replicates {
            let (_, y) = draw(sig, &noise, args.seed.wrapping_add(r as u64))?;
            first.push(power_spectrum(&y, estimator, Normalization::AreaEqualsVariance)?);
            second.push(second_order_spectrum(&y, estimator)?);
            let sq = ou_denoise::TimeSeries::new(y.dt, y.values.iter().map(|v| v * v).collect())?;
            var1 += y.variance() / args.replicates as f64;
            var2 += sq.variance() / args.replicates as f64;
        }
        let (first, second) = (average(first), average(second));
        let analytic = (case == "ou").then(|| {
            let a1 = exponential_covariance_spectrum(&first.freqs, sig.amplitude, 1.0 / sig.tau, sig.dt);
            let a2 = ou_second_order_spectrum(&second.freqs, sig.amplitude, sig.tau, sig.dt);
            (a1, a2)
        });
        let (a1, a2) = match analytic {
            Some((a1, a2)) => (Some(a1), Some(a2?)),
            None => (None, None),
        };
        let header: &[&str] = if a1.is_some() { &["freq", "power", "analytic"] } else { &["freq", "power"] };
        let f1 = format!("spectrum_{case}_first.csv");
        let f2 = format!("spectrum_{case}_second.csv");
        write_rows(run.create(&f1)?, header, rows(&first, a1.as_deref()))?;
        write_rows(run.create(&f2)?, header, rows(&second, a2.as_deref()))?;
        meta.insert(f1, json!({ "area": first.area(), "variance": var1, "area_error": (first.area() - var1).abs() }));
        meta.insert(f2, json!({ "area": second.area(), "variance": var2, "area_error": (second.area() - var2).abs() }));
    }
    let seeds = (0..args.replicates).map(|r| args.seed.wrapping_add(r as u64)).collect();
    let path = run.finish(&Command::Spectra(args.clone()), seeds, Value::Object(meta))?;
    println!("wrote {}", path.display());
    Ok(Outcome::Ok)
}

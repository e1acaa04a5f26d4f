use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ou-denoise"));
    c.env_remove("OU_DENOISE_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn manifest(dir: &Path, command: &str) -> Value {
    serde_json::from_slice(&fs::read(dir.join(format!("{command}.manifest.json"))).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_series_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "--A", "1", "--tau", "1", "--dt", "0.1", "--n", "1500", "--sigma-n", "0.2", "--seed", "7", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let latent = fs::read_to_string(out.join("latent.csv")).unwrap();
    assert!(latent.starts_with("t,value\n0,"));
    assert_eq!(latent.lines().count(), 1501);
    let m = manifest(&out, "simulate");
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["outputs"], serde_json::json!(["latent.csv", "observed.csv"]));
    assert_eq!(m["args"]["simulate"]["seed"], 7);
    assert!(m["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn silent_noise_copies_latent() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--sigma-n", "0", "--sigma-m", "0", "--n", "200", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(dir.path().join("latent.csv")).unwrap(), fs::read(dir.path().join("observed.csv")).unwrap());
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let o = run(&["simulate", "--sigma-m", "0.1", "--seed", "3", "--out-dir", s(&dir.path().join(sub))]);
        assert_eq!(code(&o), 0);
    }
    for f in ["latent.csv", "observed.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let o = run(&["simulate", "--seed", "4", "--out-dir", s(&dir.path().join("c"))]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(dir.path().join("a/latent.csv")).unwrap(), fs::read(dir.path().join("c/latent.csv")).unwrap());
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["simulate", "--n", "50"]).env("OU_DENOISE_OUT", dir.path()).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("simulate.manifest.json").exists());
}

#[test]
fn em_fit_converges_on_additive_data() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate", "--seed", "7", "--out-dir", s(dir.path())])), 0);
    let fit = dir.path().join("fit");
    let o = run(&["fit", "--method", "em", "--input", s(&dir.path().join("observed.csv")), "--out-dir", s(&fit)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&fs::read(fit.join("fit_em.json")).unwrap()).unwrap();
    assert_eq!(r["converged"], true);
    assert!((r["A"].as_f64().unwrap() - 1.0).abs() < 3.0 * r["dA"].as_f64().unwrap());
    let csv = fs::read_to_string(fit.join("fit_em.csv")).unwrap();
    assert!(csv.starts_with("A,tau,sigma_N,dA,dtau,dsigma_N,loglik,iterations,converged\n"));
    assert_eq!(manifest(&fit, "fit")["metadata"]["converged"], true);
}

#[test]
fn em_refuses_multiplicative_models() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate", "--sigma-n", "0", "--sigma-m", "0.2", "--out-dir", s(dir.path())])), 0);
    let input = dir.path().join("observed.csv");
    let o = run(&["fit", "--method", "em", "--noise", "multiplicative", "--input", s(&input), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--method mcmc"));
    assert!(!dir.path().join("fit.manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&run(&["fit", "--input", s(&missing), "--out-dir", s(dir.path())])), 2);
    assert_eq!(code(&run(&["simulate", "--tau", "-1", "--out-dir", s(dir.path())])), 2);
    assert_eq!(code(&run(&["simulate", "--bogus"])), 2);
    assert_eq!(code(&run(&["simulate", "--n", "1", "--out-dir", s(dir.path())])), 2);
    assert_eq!(code(&run(&["sweep", "--variable", "dt-over-tau", "--replicates", "0", "--out-dir", s(dir.path())])), 2);
    assert_eq!(code(&run(&["sweep", "--variable", "sideways"])), 2);
    assert_eq!(code(&run(&["replay", s(&dir.path().join("nothing.json"))])), 2);
    assert_eq!(code(&run(&["spectra", "--n", "4", "--replicates", "1", "--out-dir", s(dir.path())])), 2);
}

#[test]
fn known_ratio_mcmc_fit_writes_chain() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate", "--n", "300", "--sigma-n", "0.15", "--sigma-m", "0.1", "--out-dir", s(dir.path())])), 0);
    let input = dir.path().join("observed.csv");
    let out = dir.path().join("mc");
    let o = run(&[
        "fit", "--method", "mcmc", "--noise", "mixed-known-ratio", "--ratio", "0.5", "--samples", "200", "--warmup", "200",
        "--input", s(&input), "--out-dir", s(&out),
    ]);
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    let chain = fs::read_to_string(out.join("chain.csv")).unwrap();
    assert!(chain.starts_with("A,tau,sigma_N,sigma_M\n"));
    assert_eq!(chain.lines().count(), 201);
    let summary = fs::read_to_string(out.join("chain_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    let diag: Value = serde_json::from_slice(&fs::read(out.join("chain_diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["spec"]["noise_mode"], "mixed-known-ratio");
    assert_eq!(fs::read_to_string(out.join("latent_mean.csv")).unwrap().lines().count(), 301);
    let o = run(&["fit", "--method", "mcmc", "--noise", "mixed-known-ratio", "--input", s(&input), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate", "--n", "1500", "--seed", "2", "--dt", "1", "--out-dir", s(dir.path())])), 0);
    let input = dir.path().join("observed.csv");
    let o = run(&["fit", "--max-iters", "3", "--input", s(&input), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 3);
    assert_eq!(manifest(dir.path(), "fit")["metadata"]["converged"], false);
}

#[test]
fn degenerate_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep", "--variable", "dt-over-tau", "--grid", "1", "--replicates", "1", "--method", "em", "--n", "400",
        "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep_dt_over_tau.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("grid_value,replicate,seed,estimator,status,A_hat,dA,tau_hat,dtau,sigma_n_hat"));
    assert!(lines[1].starts_with("1,0,0,em,"));
    let rollup = fs::read_to_string(dir.path().join("sweep_dt_over_tau_rollup.csv")).unwrap();
    assert_eq!(rollup.lines().count(), 2);
}

#[test]
fn noise_ratio_sweep_records_every_replicate_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep", "--variable", "noise-ratio", "--grid", "0.5,2", "--replicates", "2", "--n", "200", "--samples", "60",
        "--warmup", "60", "--jobs", "2", "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep_noise_ratio.csv")).unwrap();
    let keys: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').take(4).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(keys, ["0.5,0,0,mcmc", "0.5,1,1,mcmc", "2,0,2,mcmc", "2,1,3,mcmc"]);
    let m = manifest(dir.path(), "sweep");
    assert_eq!(m["seeds"], serde_json::json!([0, 1, 2, 3]));
}

#[test]
fn spectra_emit_three_cases_with_area_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectra", "--n", "1024", "--replicates", "3", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(dir.path(), "spectra");
    for case in ["ou", "thermal", "multiplicative"] {
        for order in ["first", "second"] {
            let name = format!("spectrum_{case}_{order}.csv");
            let text = fs::read_to_string(dir.path().join(&name)).unwrap();
            let header = if case == "ou" { "freq,power,analytic\n" } else { "freq,power\n" };
            assert!(text.starts_with(header), "{name}");
            assert_eq!(text.lines().count(), 513);
            assert!(m["metadata"][&name]["area_error"].as_f64().unwrap() < 1e-10, "{name}");
        }
    }
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&run(&["simulate", "--n", "300", "--seed", "5", "--out-dir", s(&out)])), 0);
    let o = run(&["replay", s(&out.join("simulate.manifest.json"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("observed.csv")).unwrap(), fs::read(out.join("replay/observed.csv")).unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("identical observed.csv"));
    // a tampered output is reported
    fs::write(out.join("latent.csv"), "t,value\n0,1\n").unwrap();
    let o = run(&["replay", s(&out.join("simulate.manifest.json")), "--out-dir", s(&dir.path().join("again"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("DIFFERS"));
}

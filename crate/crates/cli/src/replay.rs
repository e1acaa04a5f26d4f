use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::args::{Command, ReplayArgs};
use crate::manifest::Manifest;
use crate::{run as run_command, usage, Outcome};

/// Columns that legitimately differ between runs.
const VOLATILE: [&str; 1] = ["runtime_s"];

fn read_table(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let Some(header) = rows.first().cloned() else {
        return Ok(rows);
    };
    let keep: Vec<usize> = (0..header.len()).filter(|i| !VOLATILE.contains(&header[*i].as_str())).collect();
    Ok(rows.into_iter().map(|r| keep.iter().filter_map(|i| r.get(*i).cloned()).collect()).collect())
}

/// Compares two CSV files cell by cell, ignoring volatile columns.
pub fn same_table(a: &Path, b: &Path) -> Result<bool> {
    Ok(read_table(a)? == read_table(b)?)
}

pub fn run(args: &ReplayArgs) -> Result<Outcome> {
    let manifest = Manifest::load(&args.manifest)?;
    if matches!(manifest.args, Command::Replay(_)) {
        return Err(usage("cannot replay a replay manifest"));
    }
    let source = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut out = args.out.out_dir.clone();
    if out == source || out == Path::new(".") {
        out = source.join("replay");
    }
    let mut command = manifest.args.clone();
    *command.out_dir_mut() = out.clone();
    let outcome = run_command(&command)?;
    let mut differing = Vec::new();
    for name in manifest.outputs.iter().filter(|n| n.ends_with(".csv")) {
        let same = same_table(&source.join(name), &out.join(name))?;
        println!("{} {name}", if same { "identical" } else { "DIFFERS  " });
        if !same {
            differing.push(name.clone());
        }
    }
    if !differing.is_empty() {
        bail!("replay of {} differs in {}", args.manifest.display(), differing.join(", "));
    }
    Ok(outcome)
}

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::args::{Command, VERSION};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Every flag of the run, including defaults.
    pub args: Command,
    pub seeds: Vec<u64>,
    pub wall_time_s: f64,
    /// Files written next to the manifest, relative to its directory.
    pub outputs: Vec<String>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Manifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
        serde_json::from_reader(file).with_context(|| format!("reading manifest {}", path.display()))
    }
}

/// Collects outputs of one command and writes its manifest at the end.
pub struct Run {
    dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), started: Instant::now(), outputs: Vec::new() })
    }

    /// Opens `name` in the output directory and records it.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    pub fn finish(self, command: &Command, seeds: Vec<u64>, metadata: serde_json::Value) -> Result<PathBuf> {
        let manifest = Manifest {
            command: command.name().to_string(),
            version: VERSION.to_string(),
            args: command.clone(),
            seeds,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
            metadata,
        };
        let path = self.dir.join(Manifest::file_name(command.name()));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
        Ok(path)
    }
}

//! Reproducibility manifests written next to command outputs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{ArgMatches, Command};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    argv: &'a [String],
    flags: &'a BTreeMap<String, Vec<String>>,
    inputs: &'a [InputDigest],
    seeds: &'a BTreeMap<String, u64>,
    version: &'static str,
    started_unix_ms: u128,
    duration_ms: f64,
}

pub struct Recorder {
    subcommand: String,
    argv: Vec<String>,
    flags: BTreeMap<String, Vec<String>>,
    inputs: Vec<InputDigest>,
    seeds: BTreeMap<String, u64>,
    started: SystemTime,
    clock: Instant,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Every flag value of a subcommand, defaults included.
pub fn flag_values(cmd: &Command, matches: &ArgMatches) -> BTreeMap<String, Vec<String>> {
    matches
        .ids()
        .filter(|id| cmd.get_arguments().any(|a| a.get_id() == *id))
        .filter_map(|id| {
            let raw = matches.get_raw(id.as_str())?;
            Some((
                id.to_string(),
                raw.map(|v| v.to_string_lossy().into_owned()).collect(),
            ))
        })
        .collect()
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl Recorder {
    pub fn new(subcommand: &str, argv: Vec<String>, flags: BTreeMap<String, Vec<String>>) -> Self {
        Recorder {
            subcommand: subcommand.to_string(),
            argv,
            flags,
            inputs: Vec::new(),
            seeds: BTreeMap::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    /// Hashes an input file as it is now.
    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn write(&self, output: &Path) -> Result<PathBuf> {
        let manifest = Manifest {
            subcommand: &self.subcommand,
            argv: &self.argv,
            flags: &self.flags,
            inputs: &self.inputs,
            seeds: &self.seeds,
            version: env!("CARGO_PKG_VERSION"),
            started_unix_ms: self
                .started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            duration_ms: self.clock.elapsed().as_secs_f64() * 1000.0,
        };
        let path = manifest_path(output);
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

//! Report, manifest and file-writing helpers shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use dica_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const RNG_NAME: &str = "ChaCha20 (rand_chacha, seed_from_u64)";

/// Mean and sample standard deviation over repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub reps: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let reps = values.len();
        if reps == 0 {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
                reps,
            };
        }
        let mean = values.iter().sum::<f64>() / reps as f64;
        let std = if reps > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std, reps }
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub rng: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seeds: Vec<u64>, config: serde_json::Value) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng: RNG_NAME.to_string(),
            seeds,
            config,
            outputs: Vec::new(),
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes `manifest.json` listing `outputs` (file names relative to `dir`).
pub fn write_manifest(dir: &Path, mut manifest: Manifest, outputs: &[PathBuf]) -> Result<PathBuf> {
    manifest.outputs = outputs
        .iter()
        .map(|p| {
            p.file_name()
                .map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned())
        })
        .collect();
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

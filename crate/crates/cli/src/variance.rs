//! Empirical distributional variance of a dataset and its domain Gram.

use std::path::{Path, PathBuf};

use dica_core::domains::{coefficient_matrix, distributional_variance, domain_gram, DomainDataset};
use dica_core::io::fmt_f64;
use dica_core::kernels::{median_bandwidth, pooled_gram, KernelSpec};
use dica_core::Result;
use serde::{Deserialize, Serialize};

use crate::report::{ensure_dir, write_json, write_manifest, write_text, Manifest};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceResult {
    pub kernel: KernelSpec,
    pub variance: f64,
    pub domain_ids: Vec<i64>,
    pub domain_sizes: Vec<usize>,
    /// Ĝ, row-major.
    pub domain_gram: Vec<Vec<f64>>,
}

/// `linear` uses the linear kernel; otherwise Gaussian with `sigma_x` or the
/// median heuristic.
pub fn kernel_for(data: &DomainDataset, linear: bool, sigma_x: Option<f64>) -> Result<KernelSpec> {
    if linear {
        return Ok(KernelSpec::Linear);
    }
    KernelSpec::gaussian(sigma_x.unwrap_or_else(|| median_bandwidth(&data.flatten().inputs)))
}

pub fn run_variance(data: &DomainDataset, kernel: &KernelSpec) -> Result<VarianceResult> {
    let g = pooled_gram(kernel, data, false)?;
    let q = coefficient_matrix(&data.domain_sizes())?;
    Ok(VarianceResult {
        kernel: *kernel,
        variance: distributional_variance(&g, &q)?,
        domain_ids: data.domains().iter().map(|b| b.id).collect(),
        domain_sizes: data.domain_sizes(),
        domain_gram: domain_gram(&g).values,
    })
}

pub fn domain_gram_csv(r: &VarianceResult) -> String {
    let mut out = String::from("domain_id");
    for id in &r.domain_ids {
        out.push_str(&format!(",{id}"));
    }
    out.push('\n');
    for (id, row) in r.domain_ids.iter().zip(&r.domain_gram) {
        out.push_str(&id.to_string());
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Writes `variance.json`, `domain_gram.csv` and `manifest.json`.
pub fn write_variance(r: &VarianceResult, config: serde_json::Value, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let json = out_dir.join("variance.json");
    write_json(&json, r)?;
    let csv = out_dir.join("domain_gram.csv");
    write_text(&csv, &domain_gram_csv(r))?;
    let mut written = vec![json, csv];
    written.push(write_manifest(out_dir, Manifest::new("variance", vec![], config), &written)?);
    Ok(written)
}

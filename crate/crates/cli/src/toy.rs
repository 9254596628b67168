//! The synthetic toy experiment: fit kpca/udica/coir/dica on the training
//! domains and project training and held-out domains onto two components.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dica_core::dica::{BoundTerms, FitConfig, Mode, Prepared, Transform};
use dica_core::domains::{domain_gram, mmd_squared, DomainBlock, DomainDataset};
use dica_core::io::fmt_f64;
use dica_core::kernels::{median_bandwidth, pooled_gram, KernelSpec};
use dica_core::synthdata::{make_toy, SynthToyConfig};
use dica_core::{Error, Result};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::report::{ensure_dir, write_json, write_manifest, write_text, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOptions {
    pub seed: u64,
    pub n_domains: usize,
    /// The last `n_test_domains` generated domains are held out.
    pub n_test_domains: usize,
    pub m: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub poisson_mean: f64,
    pub fixed_n: Option<usize>,
    pub modes: Vec<Mode>,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            seed: 0,
            n_domains: 10,
            n_test_domains: 3,
            m: 2,
            sigma_x: 1.0,
            sigma_y: 1.0,
            lambda: 0.1,
            epsilon: 1e-4,
            poisson_mean: 200.0,
            fixed_n: None,
            modes: Mode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyRow {
    pub test: bool,
    pub domain_id: i64,
    pub e1: f64,
    pub e2: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct ToyMethod {
    pub mode: Mode,
    pub transform: Transform,
    pub rows: Vec<ToyRow>,
    /// Held-out dispersion of the two leading components.
    pub dispersion: f64,
    /// tr(K̃Q) / tr(BᵀKB) on the training domains.
    pub variance_ratio: f64,
    pub bound: BoundTerms,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub options: ToyOptions,
    pub train: DomainDataset,
    pub test: DomainDataset,
    pub methods: Vec<ToyMethod>,
}

impl ToyRun {
    pub fn method(&self, mode: Mode) -> Option<&ToyMethod> {
        self.methods.iter().find(|m| m.mode == mode)
    }
}

/// Mean squared MMD over pairs of held-out domains, computed on the projected
/// samples with a Gaussian kernel whose bandwidth is the median pairwise
/// distance of the pooled held-out projections. The toy domains share a zero
/// mean and differ in covariance, so a characteristic kernel is needed; the
/// median bandwidth makes the value invariant to per-mode scalings of B.
pub fn heldout_dispersion(blocks: &[Mat<f64>]) -> Result<f64> {
    if blocks.len() < 2 {
        return Ok(0.0);
    }
    let data = DomainDataset::new(
        blocks
            .iter()
            .enumerate()
            .map(|(i, b)| DomainBlock::new(i as i64, b.clone(), None))
            .collect::<Result<_>>()?,
    )?;
    let bandwidth = median_bandwidth(&data.flatten().inputs);
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Ok(0.0);
    }
    let dg = domain_gram(&pooled_gram(&KernelSpec::gaussian(bandwidth)?, &data, false)?);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..blocks.len() {
        for j in (i + 1)..blocks.len() {
            total += mmd_squared(&dg, i, j)?.max(0.0);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

pub fn run_toy(opts: &ToyOptions) -> Result<ToyRun> {
    if opts.n_test_domains == 0 || opts.n_test_domains >= opts.n_domains {
        return Err(Error::Config(format!(
            "need at least one training and one held-out domain (n_domains = {}, held out = {})",
            opts.n_domains, opts.n_test_domains
        )));
    }
    if opts.m < 2 {
        return Err(Error::Config("the toy projection needs m >= 2".into()));
    }
    let data = make_toy(&SynthToyConfig {
        n_domains: opts.n_domains,
        poisson_mean: opts.poisson_mean,
        seed: opts.seed,
        fixed_n: opts.fixed_n,
        ..SynthToyConfig::default()
    })?;
    let n_train = opts.n_domains - opts.n_test_domains;
    let train = data.subset(&(0..n_train).collect::<Vec<_>>())?;
    let test = data.subset(&(n_train..opts.n_domains).collect::<Vec<_>>())?;
    let kx = KernelSpec::gaussian(opts.sigma_x)?;
    let ky = KernelSpec::gaussian(opts.sigma_y)?;

    let supervised = opts.modes.iter().any(|m| m.supervised());
    let prepared = Prepared::new(&train, &kx, &ky, supervised.then_some(opts.epsilon))?;
    let mut methods = Vec::with_capacity(opts.modes.len());
    for &mode in &opts.modes {
        let cfg = FitConfig {
            mode,
            m: opts.m,
            epsilon: opts.epsilon,
            lambda: opts.lambda,
            ..FitConfig::default()
        };
        let t = prepared.fit(&cfg)?;
        let mut rows = Vec::with_capacity(data.total_len());
        let f = t.features_train();
        let mut a = 0;
        for b in train.domains() {
            let y = b.outputs().expect("toy domains carry outputs");
            for &yi in y {
                rows.push(ToyRow {
                    test: false,
                    domain_id: b.id,
                    e1: f[(a, 0)],
                    e2: f[(a, 1)],
                    y: yi,
                });
                a += 1;
            }
        }
        let mut held = Vec::with_capacity(test.n_domains());
        for b in test.domains() {
            let ft = t.features_for(b.inputs())?;
            let y = b.outputs().expect("toy domains carry outputs");
            for (i, &yi) in y.iter().enumerate() {
                rows.push(ToyRow {
                    test: true,
                    domain_id: b.id,
                    e1: ft[(i, 0)],
                    e2: ft[(i, 1)],
                    y: yi,
                });
            }
            held.push(ft.subcols(0, 2).to_owned());
        }
        let bound = t.bound_terms();
        let variance_ratio = if bound.complexity_term > 0.0 {
            bound.projected_variance / bound.complexity_term
        } else {
            f64::NAN
        };
        methods.push(ToyMethod {
            mode,
            dispersion: heldout_dispersion(&held)?,
            variance_ratio,
            bound,
            rows,
            transform: t,
        });
    }
    Ok(ToyRun {
        options: opts.clone(),
        train,
        test,
        methods,
    })
}

/// CSV body for one method: `split,domain_id,e1,e2,y`.
pub fn toy_csv(method: &ToyMethod) -> String {
    let mut out = String::from("split,domain_id,e1,e2,y\n");
    for r in &method.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            if r.test { "test" } else { "train" },
            r.domain_id,
            fmt_f64(r.e1),
            fmt_f64(r.e2),
            fmt_f64(r.y)
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyMethodReport {
    pub mode: Mode,
    pub heldout_dispersion: f64,
    pub variance_ratio: f64,
    pub projected_variance: f64,
    pub dist_term: f64,
    pub complexity_term: f64,
    pub gamma: Vec<f64>,
    pub effective_rank: usize,
    pub max_imag: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyReport {
    pub seed: u64,
    pub train_domain_ids: Vec<i64>,
    pub test_domain_ids: Vec<i64>,
    pub train_sizes: Vec<usize>,
    pub test_sizes: Vec<usize>,
    pub methods: BTreeMap<String, ToyMethodReport>,
}

pub fn toy_report(run: &ToyRun) -> ToyReport {
    ToyReport {
        seed: run.options.seed,
        train_domain_ids: run.train.domains().iter().map(|b| b.id).collect(),
        test_domain_ids: run.test.domains().iter().map(|b| b.id).collect(),
        train_sizes: run.train.domain_sizes(),
        test_sizes: run.test.domain_sizes(),
        methods: run
            .methods
            .iter()
            .map(|m| {
                (
                    m.mode.name().to_string(),
                    ToyMethodReport {
                        mode: m.mode,
                        heldout_dispersion: m.dispersion,
                        variance_ratio: m.variance_ratio,
                        projected_variance: m.bound.projected_variance,
                        dist_term: m.bound.dist_term,
                        complexity_term: m.bound.complexity_term,
                        gamma: m.transform.gamma.clone(),
                        effective_rank: m.transform.effective_rank,
                        max_imag: m.transform.max_imag,
                    },
                )
            })
            .collect(),
    }
}

/// Writes `toy_<mode>.csv` per method, `report.json` and `manifest.json`.
pub fn write_toy(run: &ToyRun, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for m in &run.methods {
        let path = out_dir.join(format!("toy_{}.csv", m.mode));
        write_text(&path, &toy_csv(m))?;
        written.push(path);
    }
    let report = out_dir.join("report.json");
    write_json(&report, &toy_report(run))?;
    written.push(report);
    let manifest = Manifest::new("toy", vec![run.options.seed], serde_json::to_value(&run.options)?);
    written.push(write_manifest(out_dir, manifest, &written)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyOptions {
        ToyOptions {
            fixed_n: Some(30),
            n_domains: 6,
            ..ToyOptions::default()
        }
    }

    #[test]
    fn dispersion_of_identical_blocks_is_zero() {
        let b = Mat::from_fn(5, 2, |i, j| (i + j) as f64);
        assert!(heldout_dispersion(&[b.clone(), b.clone(), b]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dispersion_is_scale_invariant() {
        let a = Mat::from_fn(4, 2, |i, j| (i * j) as f64 + 0.3 * i as f64);
        let b = Mat::from_fn(4, 2, |i, j| (i + 2 * j) as f64);
        let d1 = heldout_dispersion(&[a.clone(), b.clone()]).unwrap();
        let d2 = heldout_dispersion(&[&a * faer::Scale(7.0), &b * faer::Scale(7.0)]).unwrap();
        assert!((d1 - d2).abs() < 1e-12 * d1);
    }

    #[test]
    fn rows_match_library_projection() {
        let run = run_toy(&small()).unwrap();
        assert_eq!(run.test.n_domains(), 3);
        for m in &run.methods {
            let test_rows: Vec<&ToyRow> = m.rows.iter().filter(|r| r.test).collect();
            let mut k = 0;
            for b in run.test.domains() {
                let cg = m.transform.cross_gram(b.inputs()).unwrap();
                let p = m.transform.features_test(&cg).unwrap();
                for i in 0..b.len() {
                    assert_eq!(test_rows[k].domain_id, b.id);
                    assert!((test_rows[k].e1 - p[(i, 0)]).abs() <= 1e-12 * (1.0 + p[(i, 0)].abs()));
                    assert!((test_rows[k].e2 - p[(i, 1)]).abs() <= 1e-12 * (1.0 + p[(i, 1)].abs()));
                    k += 1;
                }
            }
            assert_eq!(k, test_rows.len());
        }
    }

    #[test]
    fn rejects_bad_splits() {
        let mut o = small();
        o.n_test_domains = 6;
        assert!(matches!(run_toy(&o), Err(Error::Config(_))));
        o.n_test_domains = 0;
        assert!(run_toy(&o).is_err());
    }
}

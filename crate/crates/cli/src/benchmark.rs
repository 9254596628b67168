//! Repeated held-out-domain benchmarks: classification with a ridge
//! classifier and two-target regression with ridge regression, each over
//! {input, kpca, coir, udica, dica} × {pooling, distributional}.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dica_core::domains::{DomainBlock, DomainDataset};
use dica_core::downstream::{
    cross_validate, evaluate_setting, extract_many, lls_fit, lls_predict, metrics, run_pipeline,
    targets, Method, PipelineConfig, PipelineOutcome, Setting, Task,
};
use dica_core::io::{fmt_f64, Telemonitoring};
use dica_core::synthdata::{make_classification, make_regression, rng_from_seed, SynthClassConfig, SynthRegressionConfig};
use dica_core::{Error, Result};
use faer::Mat;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::grid::{expand, GridAxis};
use crate::report::{ensure_dir, write_json, write_manifest, write_text, Manifest, Summary};

/// Settings shared by both benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub seed: u64,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub m: usize,
    pub epsilon: Option<f64>,
    pub lambda: f64,
    pub sigma_x: Option<f64>,
    /// Output-kernel bandwidth for regression (σ₃).
    pub sigma_y: Option<f64>,
    pub sigma1: Option<f64>,
    pub eta: f64,
    /// Cross-validated on the training domains when non-empty.
    pub grid: Vec<GridAxis>,
    /// Caps each domain at this many points (uniform subsample).
    pub per_domain_n: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            seed: 0,
            reps: 1,
            methods: Method::ALL.to_vec(),
            m: 5,
            epsilon: None,
            lambda: 1e-4,
            sigma_x: None,
            sigma_y: None,
            sigma1: None,
            eta: 1e-2,
            grid: Vec::new(),
            per_domain_n: None,
        }
    }
}

impl BenchOptions {
    pub fn pipeline(&self, method: Method, setting: Setting, task: Task) -> PipelineConfig {
        let base = PipelineConfig::new(method, setting, task);
        PipelineConfig {
            m: self.m,
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            lambda: self.lambda,
            sigma_x: self.sigma_x,
            sigma_y: self.sigma_y,
            sigma1: self.sigma1,
            eta: self.eta,
            ..base
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.per_domain_n == Some(0) {
            return Err(Error::Config("per-domain-n must be positive".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.reps as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}

/// Where classification domains come from.
#[derive(Debug, Clone)]
pub enum ClassifySource {
    /// Regenerated per repetition with the repetition's seed.
    Synthetic(SynthClassConfig),
    /// A fixed dataset whose domains are randomly split per repetition.
    Dataset { data: DomainDataset, n_test_domains: usize },
}

/// Where regression subjects come from.
#[derive(Debug, Clone)]
pub enum RegressSource {
    Synthetic { config: SynthRegressionConfig, n_train_domains: usize },
    Dataset { data: Telemonitoring, n_train_domains: usize },
}

/// One held-out prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub rep: usize,
    pub seed: u64,
    pub target: String,
    pub method: String,
    pub setting: String,
    pub domain_id: i64,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChosenParams {
    pub seed: u64,
    pub m: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub sigma_x: f64,
    pub sigma_y: Option<f64>,
    pub sigma1: Option<f64>,
    pub eta: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub target: String,
    pub method: String,
    pub setting: String,
    pub score: Summary,
    pub values: Vec<f64>,
    pub dist_term: Option<Summary>,
    pub complexity_term: Option<Summary>,
    pub chosen: Vec<ChosenParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub task: Task,
    /// `accuracy` or `rmse`.
    pub metric: String,
    pub seeds: Vec<u64>,
    pub reps: usize,
    pub rows: Vec<ReportRow>,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn row(&self, target: &str, method: &str, setting: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.method == method && r.setting == setting)
    }
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: ExperimentReport,
    pub predictions: Vec<PredictionRow>,
}

#[derive(Default)]
struct Accumulator {
    order: Vec<(String, String, String)>,
    rows: BTreeMap<(String, String, String), (Vec<f64>, Vec<f64>, Vec<f64>, Vec<ChosenParams>)>,
}

impl Accumulator {
    fn push(&mut self, key: (String, String, String), metric: f64, out: Option<(&PipelineOutcome, &PipelineConfig, u64)>) {
        if !self.rows.contains_key(&key) {
            self.order.push(key.clone());
        }
        let e = self.rows.entry(key).or_default();
        e.0.push(metric);
        if let Some((o, cfg, seed)) = out {
            if let Some(b) = o.bound {
                e.1.push(b.dist_term);
                e.2.push(b.complexity_term);
            }
            e.3.push(ChosenParams {
                seed,
                m: cfg.m,
                epsilon: cfg.epsilon,
                lambda: cfg.lambda,
                sigma_x: o.sigma_x,
                sigma_y: o.sigma_y,
                sigma1: o.sigma1,
                eta: cfg.eta,
                ridge: o.ridge,
            });
        }
    }

    fn finish(self) -> Vec<ReportRow> {
        let mut rows = self.rows;
        self.order
            .into_iter()
            .map(|key| {
                let (values, dist, comp, chosen) = rows.remove(&key).expect("key recorded");
                ReportRow {
                    target: key.0,
                    method: key.1,
                    setting: key.2,
                    score: Summary::of(&values),
                    values,
                    dist_term: (!dist.is_empty()).then(|| Summary::of(&dist)),
                    complexity_term: (!comp.is_empty()).then(|| Summary::of(&comp)),
                    chosen,
                }
            })
            .collect()
    }
}

/// Uniformly subsamples each domain to at most `cap` points, keeping order.
pub fn subsample_domains(data: &DomainDataset, cap: usize, rng: &mut impl rand::Rng) -> Result<DomainDataset> {
    let blocks = data
        .domains()
        .iter()
        .map(|b| {
            if b.len() <= cap {
                return Ok(b.clone());
            }
            let mut keep = index::sample(rng, b.len(), cap).into_vec();
            keep.sort_unstable();
            let x = Mat::from_fn(cap, data.dim(), |i, j| b.inputs()[(keep[i], j)]);
            let y = b.outputs().map(|y| keep.iter().map(|&i| y[i]).collect());
            DomainBlock::new(b.id, x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    DomainDataset::new(blocks)
}

/// Random split of domain indices into (train, test).
pub fn split_domains(n_domains: usize, n_train: usize, rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_domains).collect();
    idx.shuffle(rng);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Evaluates every method in both settings on one split. Without a grid a
/// single fit serves both settings.
fn evaluate_split(
    train: &DomainDataset,
    test: &DomainDataset,
    opts: &BenchOptions,
    task: Task,
) -> Result<Vec<(Method, Setting, PipelineConfig, PipelineOutcome)>> {
    let y = targets(train, "training")?;
    let y_test = targets(test, "test")?;
    let mut out = Vec::new();
    let mut extracted = if opts.grid.is_empty() {
        let cfgs: Vec<PipelineConfig> = opts
            .methods
            .iter()
            .map(|&m| opts.pipeline(m, Setting::Pooling, task))
            .collect();
        extract_many(train, test, &cfgs)?
    } else {
        Vec::new()
    }
    .into_iter();
    for &method in &opts.methods {
        if opts.grid.is_empty() {
            let cfg = opts.pipeline(method, Setting::Pooling, task);
            let ek = extracted.next().expect("one extraction per method");
            for setting in Setting::ALL {
                let cfg = PipelineConfig { setting, ..cfg };
                let o = evaluate_setting(&ek, &y, &y_test, setting, &cfg)?;
                out.push((method, setting, cfg, o));
            }
        } else {
            for setting in Setting::ALL {
                let grid = expand(&opts.pipeline(method, setting, task), &opts.grid);
                let best = cross_validate(train, &grid)?.best;
                let o = run_pipeline(train, test, &best)?;
                out.push((method, setting, best, o));
            }
        }
    }
    Ok(out)
}

fn record(
    acc: &mut Accumulator,
    preds: &mut Vec<PredictionRow>,
    rep: usize,
    seed: u64,
    target: &str,
    test: &DomainDataset,
    results: Vec<(Method, Setting, PipelineConfig, PipelineOutcome)>,
) {
    let flat = test.flatten();
    let y_test = flat.outputs.expect("test outputs checked");
    let ids: Vec<i64> = flat.domain_ids.iter().map(|&d| test.domains()[d].id).collect();
    for (method, setting, cfg, o) in results {
        for (k, &p) in o.predictions.iter().enumerate() {
            preds.push(PredictionRow {
                rep,
                seed,
                target: target.into(),
                method: method.name().into(),
                setting: setting.name().into(),
                domain_id: ids[k],
                y_true: y_test[k],
                y_pred: p,
            });
        }
        acc.push(
            (target.into(), method.name().into(), setting.name().into()),
            o.metric,
            Some((&o, &cfg, seed)),
        );
    }
}

pub fn run_classify(source: &ClassifySource, opts: &BenchOptions) -> Result<BenchRun> {
    opts.validate()?;
    let start = Instant::now();
    let mut acc = Accumulator::default();
    let mut preds = Vec::new();
    let seeds = opts.seeds();
    for (rep, &seed) in seeds.iter().enumerate() {
        let mut rng = rng_from_seed(seed);
        let (mut train, mut test) = match source {
            ClassifySource::Synthetic(cfg) => make_classification(&SynthClassConfig { seed, ..cfg.clone() })?,
            ClassifySource::Dataset { data, n_test_domains } => {
                if *n_test_domains == 0 || *n_test_domains >= data.n_domains() {
                    return Err(Error::Config(format!(
                        "cannot hold out {n_test_domains} of {} domains",
                        data.n_domains()
                    )));
                }
                let (tr, te) = split_domains(data.n_domains(), data.n_domains() - n_test_domains, &mut rng);
                (data.subset(&tr)?, data.subset(&te)?)
            }
        };
        if train.n_domains() < 2 {
            return Err(Error::Config(format!(
                "classification needs at least 2 training domains, got {}",
                train.n_domains()
            )));
        }
        if let Some(cap) = opts.per_domain_n {
            train = subsample_domains(&train, cap, &mut rng)?;
            test = subsample_domains(&test, cap, &mut rng)?;
        }
        let results = evaluate_split(&train, &test, opts, Task::BinaryClassification)?;
        record(&mut acc, &mut preds, rep, seed, "label", &test, results);
    }
    Ok(BenchRun {
        report: ExperimentReport {
            command: "classify".into(),
            task: Task::BinaryClassification,
            metric: "accuracy".into(),
            seeds,
            reps: opts.reps,
            rows: acc.finish(),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
        predictions: preds,
    })
}

fn lls_rmse(train: &DomainDataset, test: &DomainDataset) -> Result<(f64, Vec<f64>)> {
    let ftr = train.flatten();
    let fte = test.flatten();
    let model = lls_fit(&ftr.inputs, &targets(train, "training")?)?;
    let pred = lls_predict(&model, &fte.inputs)?;
    Ok((metrics(&targets(test, "test")?, &pred, Task::Regression)?, pred))
}

pub fn run_regress(source: &RegressSource, opts: &BenchOptions) -> Result<BenchRun> {
    opts.validate()?;
    let start = Instant::now();
    let mut acc = Accumulator::default();
    let mut preds = Vec::new();
    let seeds = opts.seeds();
    for (rep, &seed) in seeds.iter().enumerate() {
        let mut rng = rng_from_seed(seed);
        let (data, n_train) = match source {
            RegressSource::Synthetic { config, n_train_domains } => (
                make_regression(&SynthRegressionConfig { seed, ..config.clone() })?,
                *n_train_domains,
            ),
            RegressSource::Dataset { data, n_train_domains } => (data.clone(), *n_train_domains),
        };
        let nd = data.motor.n_domains();
        if n_train < 2 || n_train >= nd {
            return Err(Error::Config(format!(
                "need 2 <= training subjects < {nd}, got {n_train}"
            )));
        }
        let (tr, te) = split_domains(nd, n_train, &mut rng);
        // One subsample of subjects' recordings shared by both targets.
        let (motor, total) = match opts.per_domain_n {
            Some(cap) => {
                let mut r2 = rng.clone();
                let motor = subsample_domains(&data.motor, cap, &mut rng)?;
                let total = subsample_domains(&data.total, cap, &mut r2)?;
                (motor, total)
            }
            None => (data.motor, data.total),
        };
        for (name, ds) in [("motor", &motor), ("total", &total)] {
            let train = ds.subset(&tr)?;
            let test = ds.subset(&te)?;
            let (rmse, pred) = lls_rmse(&train, &test)?;
            let flat = test.flatten();
            let y_test = flat.outputs.as_ref().expect("outputs present");
            for (k, &p) in pred.iter().enumerate() {
                preds.push(PredictionRow {
                    rep,
                    seed,
                    target: name.into(),
                    method: "lls".into(),
                    setting: "none".into(),
                    domain_id: test.domains()[flat.domain_ids[k]].id,
                    y_true: y_test[k],
                    y_pred: p,
                });
            }
            acc.push((name.into(), "lls".into(), "none".into()), rmse, None);
            let results = evaluate_split(&train, &test, opts, Task::Regression)?;
            record(&mut acc, &mut preds, rep, seed, name, &test, results);
        }
    }
    Ok(BenchRun {
        report: ExperimentReport {
            command: "regress".into(),
            task: Task::Regression,
            metric: "rmse".into(),
            seeds,
            reps: opts.reps,
            rows: acc.finish(),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
        predictions: preds,
    })
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("rep,seed,target,method,setting,domain_id,y_true,y_pred\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.rep,
            r.seed,
            r.target,
            r.method,
            r.setting,
            r.domain_id,
            fmt_f64(r.y_true),
            fmt_f64(r.y_pred)
        ));
    }
    out
}

/// Mean ± std table with one row per method and one column per
/// (setting, target), in the layout of a results table.
pub fn results_table(report: &ExperimentReport) -> String {
    let targets: Vec<String> = {
        let mut t: Vec<String> = Vec::new();
        for r in &report.rows {
            if !t.contains(&r.target) {
                t.push(r.target.clone());
            }
        }
        t
    };
    let mut methods: Vec<String> = Vec::new();
    for r in &report.rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut header = vec!["method".to_string()];
    for s in Setting::ALL {
        for t in &targets {
            header.push(format!("{} {} ({})", s.name(), t, report.metric));
        }
    }
    let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for m in &methods {
        let mut cells = vec![m.to_uppercase()];
        for s in Setting::ALL {
            for t in &targets {
                let row = report
                    .row(t, m, s.name())
                    .or_else(|| report.row(t, m, "none"));
                cells.push(row.map_or_else(
                    || "-".into(),
                    |r| format!("{:.4} ± {:.4}", r.score.mean, r.score.std),
                ));
            }
        }
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out.push_str(&format!("\n{} repetitions, seeds {:?}\n", report.reps, report.seeds));
    out
}

/// Writes `report.json`, `predictions.csv`, `table.md` and `manifest.json`.
pub fn write_bench(run: &BenchRun, config: serde_json::Value, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    let report = out_dir.join("report.json");
    write_json(&report, &run.report)?;
    written.push(report);
    let preds = out_dir.join("predictions.csv");
    write_text(&preds, &predictions_csv(&run.predictions))?;
    written.push(preds);
    let table = out_dir.join("table.md");
    write_text(&table, &results_table(&run.report))?;
    written.push(table);
    let manifest = Manifest::new(&run.report.command, run.report.seeds.clone(), config);
    written.push(write_manifest(out_dir, manifest, &written)?);
    Ok(written)
}

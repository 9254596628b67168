//! Downstream learners on top of the learned transforms: pooling and
//! distributional kernels, kernel ridge regression/classification, metrics,
//! domain-wise cross-validation and a linear least-squares baseline.

use std::fmt;
use std::str::FromStr;

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dica::{BoundTerms, FitConfig, Mode, Prepared};
use crate::domains::{mmd_squared, DomainDataset, DomainGram};
use crate::eigen;
use crate::error::{Error, Result};
use crate::kernels::{gram_of_rows, kernel_between, median, median_bandwidth, KernelSpec};
use crate::matrix::add_diagonal;

/// Product kernel `k₁(Pⁱ, Pʲ)·k₂(x, x')` with Gaussian `k₁` on mean embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionalKernelSpec {
    pub sigma1: f64,
    pub base: KernelSpec,
}

impl DistributionalKernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(Error::Config(format!(
                "sigma1 must be positive and finite, got {}",
                self.sigma1
            )));
        }
        self.base.validate()
    }
}

/// Entry `(a, b)` is `exp(−mmd²(id_a, id_b)/(2σ₁²)) · inner(a, b)`.
pub fn distributional_gram(
    inner: &Mat<f64>,
    dg: &DomainGram,
    spec: &DistributionalKernelSpec,
    row_ids: &[usize],
    col_ids: &[usize],
) -> Result<Mat<f64>> {
    spec.validate()?;
    if inner.nrows() != row_ids.len() || inner.ncols() != col_ids.len() {
        return Err(Error::Input(format!(
            "inner kernel is {}x{} but {} row ids and {} column ids were given",
            inner.nrows(),
            inner.ncols(),
            row_ids.len(),
            col_ids.len()
        )));
    }
    let k1 = domain_kernel(dg, spec.sigma1)?;
    let nd = dg.n_domains();
    if let Some(&bad) = row_ids.iter().chain(col_ids).find(|&&i| i >= nd) {
        return Err(Error::Input(format!(
            "domain id {bad} out of range for {nd} domains"
        )));
    }
    Ok(Mat::from_fn(inner.nrows(), inner.ncols(), |a, b| {
        k1[(row_ids[a], col_ids[b])] * inner[(a, b)]
    }))
}

/// `k₁` between all domains of `dg`.
pub fn domain_kernel(dg: &DomainGram, sigma1: f64) -> Result<Mat<f64>> {
    let nd = dg.n_domains();
    let denom = 2.0 * sigma1 * sigma1;
    let mut k = Mat::<f64>::zeros(nd, nd);
    for i in 0..nd {
        for j in i..nd {
            let v = (-mmd_squared(dg, i, j)?.max(0.0) / denom).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Median of `√mmd²` over pairs among the first `n_train` domains; 1 when
/// fewer than two domains or every pair coincides.
pub fn median_mmd_bandwidth(dg: &DomainGram, n_train: usize) -> f64 {
    let mut d = Vec::new();
    for i in 0..n_train {
        for j in (i + 1)..n_train {
            d.push(mmd_squared(dg, i, j).unwrap_or(0.0).max(0.0).sqrt());
        }
    }
    match median(&mut d) {
        Some(m) if m > 0.0 => m,
        _ => 1.0,
    }
}

/// Ĝ from per-point feature rows under the linear kernel: block means of
/// features, then inner products.
pub fn feature_domain_gram(features: &Mat<f64>, ids: &[usize], n_domains: usize) -> DomainGram {
    let m = features.ncols();
    let mut means = vec![vec![0.0; m]; n_domains];
    let mut counts = vec![0usize; n_domains];
    for (a, &k) in ids.iter().enumerate() {
        counts[k] += 1;
        for j in 0..m {
            means[k][j] += features[(a, j)];
        }
    }
    for (mean, &c) in means.iter_mut().zip(&counts) {
        if c > 0 {
            mean.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    let values = (0..n_domains)
        .map(|i| {
            (0..n_domains)
                .map(|j| means[i].iter().zip(&means[j]).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    DomainGram { values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub alpha: Vec<f64>,
    pub ridge: f64,
    pub task: Task,
    /// Class labels encoded as −1 and +1, in that order.
    pub label_map: Option<[f64; 2]>,
    /// Added to every regression prediction.
    #[serde(default)]
    pub offset: f64,
}

/// Solves `(gram + ηI)α = y`; classification targets are first mapped to ±1
/// (smaller label → −1).
pub fn ridge_fit(gram: &Mat<f64>, y: &[f64], eta: f64, task: Task) -> Result<RidgeModel> {
    let n = gram.nrows();
    if gram.ncols() != n || y.len() != n {
        return Err(Error::Input(format!(
            "gram is {}x{} with {} targets",
            gram.nrows(),
            gram.ncols(),
            y.len()
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!("ridge must be positive, got {eta}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("targets must be finite".into()));
    }
    let (targets, label_map) = match task {
        Task::Regression => (y.to_vec(), None),
        Task::BinaryClassification => {
            let mut labels: Vec<f64> = y.to_vec();
            labels.sort_by(f64::total_cmp);
            labels.dedup();
            if labels.len() > 2 {
                return Err(Error::Input(format!(
                    "binary classification needs at most two labels, found {}",
                    labels.len()
                )));
            }
            let map = [labels[0], *labels.last().expect("nonempty")];
            let t = y
                .iter()
                .map(|&v| if v == map[1] && map[0] != map[1] { 1.0 } else { -1.0 })
                .collect();
            (t, Some(map))
        }
    };
    let mut system = add_diagonal(gram, eta);
    crate::matrix::symmetrize(&mut system);
    let rhs = Mat::from_fn(n, 1, |i, _| targets[i]);
    let alpha = eigen::solve_spd(&system, &rhs)?;
    Ok(RidgeModel {
        alpha: (0..n).map(|i| alpha[(i, 0)]).collect(),
        ridge: eta,
        task,
        label_map,
        offset: 0.0,
    })
}

/// Regression returns `cross·α + offset`; classification maps the sign back
/// to labels, with a zero score going to the first class.
pub fn ridge_predict(model: &RidgeModel, cross: &Mat<f64>) -> Result<Vec<f64>> {
    if cross.ncols() != model.alpha.len() {
        return Err(Error::Input(format!(
            "cross kernel has {} columns, model has {} coefficients",
            cross.ncols(),
            model.alpha.len()
        )));
    }
    let scores = (0..cross.nrows()).map(|t| {
        (0..cross.ncols())
            .map(|a| cross[(t, a)] * model.alpha[a])
            .sum::<f64>()
    });
    Ok(match (model.task, model.label_map) {
        (Task::BinaryClassification, Some([neg, pos])) => scores
            .map(|s| if s > 0.0 { pos } else { neg })
            .collect(),
        _ => scores.map(|s| s + model.offset).collect(),
    })
}

/// Accuracy for classification, RMSE for regression.
pub fn metrics(y_true: &[f64], y_pred: &[f64], task: Task) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Input(format!(
            "{} targets vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    let n = y_true.len() as f64;
    Ok(match task {
        Task::BinaryClassification => {
            y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / n
        }
        Task::Regression => (y_true
            .iter()
            .zip(y_pred)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
            .sqrt(),
    })
}

/// Larger is better: accuracy, or negated RMSE.
pub fn score(y_true: &[f64], y_pred: &[f64], task: Task) -> Result<f64> {
    let v = metrics(y_true, y_pred, task)?;
    Ok(match task {
        Task::BinaryClassification => v,
        Task::Regression => -v,
    })
}

/// Feature extractor ahead of the ridge learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Input,
    Kpca,
    Coir,
    Udica,
    Dica,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Input,
        Method::Kpca,
        Method::Coir,
        Method::Udica,
        Method::Dica,
    ];

    pub fn mode(self) -> Option<Mode> {
        match self {
            Method::Input => None,
            Method::Kpca => Some(Mode::Kpca),
            Method::Coir => Some(Mode::Coir),
            Method::Udica => Some(Mode::Udica),
            Method::Dica => Some(Mode::Dica),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Input => "input",
            Method::Kpca => "kpca",
            Method::Coir => "coir",
            Method::Udica => "udica",
            Method::Dica => "dica",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Pooling,
    Distributional,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Pooling, Setting::Distributional];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Pooling => "pooling",
            Setting::Distributional => "distributional",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One downstream pipeline: features, kernel setting and learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub setting: Setting,
    pub task: Task,
    pub m: usize,
    pub epsilon: f64,
    pub lambda: f64,
    /// Input bandwidth σ₂; median heuristic over the training inputs if absent.
    pub sigma_x: Option<f64>,
    /// Output bandwidth for regression; median of the training targets if absent.
    pub sigma_y: Option<f64>,
    /// Bandwidth of `k₁`; median-MMD heuristic if absent.
    pub sigma1: Option<f64>,
    /// Ridge relative to the mean diagonal of the training Gram.
    pub eta: f64,
}

impl PipelineConfig {
    pub fn new(method: Method, setting: Setting, task: Task) -> Self {
        PipelineConfig {
            method,
            setting,
            task,
            m: 5,
            epsilon: match task {
                Task::BinaryClassification => 1e-4,
                Task::Regression => 1e-2,
            },
            lambda: 1e-4,
            sigma_x: None,
            sigma_y: None,
            sigma1: None,
            eta: 1e-2,
        }
    }

    pub fn fit_config(&self, mode: Mode) -> FitConfig {
        FitConfig {
            mode,
            m: self.m,
            epsilon: self.epsilon,
            lambda: self.lambda,
            ..FitConfig::default()
        }
    }
}

/// What a pipeline produced on one train/test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub predictions: Vec<f64>,
    /// Accuracy or RMSE on the test split.
    pub metric: f64,
    pub sigma_x: f64,
    pub sigma_y: Option<f64>,
    pub sigma1: Option<f64>,
    pub ridge: f64,
    pub bound: Option<BoundTerms>,
    pub effective_rank: Option<usize>,
}

pub fn targets(data: &DomainDataset, what: &str) -> Result<Vec<f64>> {
    data.flatten()
        .outputs
        .ok_or_else(|| Error::Input(format!("{what} domains carry no outputs")))
}

/// Output kernel: delta for classification, Gaussian for regression.
pub fn output_kernel(task: Task, sigma_y: Option<f64>, y: &[f64]) -> Result<KernelSpec> {
    match task {
        Task::BinaryClassification => Ok(KernelSpec::Delta),
        Task::Regression => {
            let s = match sigma_y {
                Some(s) => s,
                None => {
                    let mut v = y.to_vec();
                    median(&mut v).filter(|m| *m > 0.0).unwrap_or(1.0)
                }
            };
            KernelSpec::gaussian(s)
        }
    }
}

/// Kernels between training points and from test to training points after
/// feature extraction, plus the domain Gram over train and test domains.
#[derive(Debug, Clone)]
pub struct ExtractedKernels {
    pub method: Method,
    /// Training inner kernel (raw input kernel or `F Fᵀ`).
    pub inner: Mat<f64>,
    /// Test-to-train inner kernel.
    pub cross: Mat<f64>,
    /// Ĝ over training domains followed by test domains.
    pub domain_gram: DomainGram,
    pub train_ids: Vec<usize>,
    /// Test rows index Ĝ after the training domains.
    pub test_ids: Vec<usize>,
    pub n_train_domains: usize,
    pub sigma_x: f64,
    pub sigma_y: Option<f64>,
    pub bound: Option<BoundTerms>,
    pub effective_rank: Option<usize>,
}

/// Fits the feature extractor on `train` and builds every kernel block the
/// learners need. Test domains never enter a Gram used for fitting; they only
/// appear in cross kernels built afterwards.
pub fn extract_kernels(
    train: &DomainDataset,
    test: &DomainDataset,
    cfg: &PipelineConfig,
) -> Result<ExtractedKernels> {
    let mut out = extract_many(train, test, std::slice::from_ref(cfg))?;
    Ok(out.pop().expect("one config in, one out"))
}

/// [`extract_kernels`] for several configs on the same split. Fits that share
/// kernels and ε reuse one [`Prepared`].
pub fn extract_many(
    train: &DomainDataset,
    test: &DomainDataset,
    cfgs: &[PipelineConfig],
) -> Result<Vec<ExtractedKernels>> {
    let y = targets(train, "training")?;
    if test.dim() != train.dim() {
        return Err(Error::Input("train and test dimensions differ".into()));
    }
    let ftr = train.flatten();
    let fte = test.flatten();
    let n_train_domains = train.n_domains();
    let n_all = n_train_domains + test.n_domains();
    let test_ids: Vec<usize> = fte.domain_ids.iter().map(|&i| i + n_train_domains).collect();
    let median_x = median_bandwidth(&ftr.inputs);

    let resolved = cfgs
        .iter()
        .map(|cfg| {
            let sigma_x = cfg.sigma_x.unwrap_or(median_x);
            let ky = output_kernel(cfg.task, cfg.sigma_y, &y)?;
            Ok((sigma_x, KernelSpec::gaussian(sigma_x)?, ky))
        })
        .collect::<Result<Vec<_>>>()?;
    // One Prepared per (kx, ky, ε-if-supervised).
    let mut cache: Vec<(KernelSpec, KernelSpec, Option<f64>, Prepared)> = Vec::new();
    let mut out = Vec::with_capacity(cfgs.len());
    for (cfg, &(sigma_x, kx, ky)) in cfgs.iter().zip(&resolved) {
        let mut sigma_y = None;
        let (inner, cross, domain_gram, bound, effective_rank) = match cfg.method.mode() {
            None => {
                let inner = gram_of_rows(&kx, &ftr.inputs);
                let cross = kernel_between(&kx, &fte.inputs, &ftr.inputs);
                let tt = gram_of_rows(&kx, &fte.inputs);
                let dg = block_mean_gram(&inner, &cross, &tt, &ftr.domain_ids, &test_ids, n_all);
                (inner, cross, dg, None, None)
            }
            Some(mode) => {
                if let KernelSpec::GaussianRbf { bandwidth } = ky {
                    sigma_y = Some(bandwidth);
                }
                let hit = cache.iter().position(|(a, b, e, _)| {
                    *a == kx && *b == ky && (!mode.supervised() || *e == Some(cfg.epsilon))
                });
                let slot = match hit {
                    Some(i) => i,
                    None => {
                        // Build the supervised pieces if any later config on
                        // these kernels will need them.
                        let eps = cfgs
                            .iter()
                            .zip(&resolved)
                            .find(|(c, r)| {
                                r.1 == kx
                                    && r.2 == ky
                                    && c.method.mode().is_some_and(Mode::supervised)
                                    && (!mode.supervised() || c.epsilon == cfg.epsilon)
                            })
                            .map(|(c, _)| c.epsilon);
                        cache.push((kx, ky, eps, Prepared::new(train, &kx, &ky, eps)?));
                        cache.len() - 1
                    }
                };
                let t = cache[slot].3.fit(&cfg.fit_config(mode))?;
                let f = t.features_train();
                let ft = t.features_for(&fte.inputs)?;
                let inner = f * f.transpose();
                let cross = &ft * f.transpose();
                let mut all = Mat::<f64>::zeros(f.nrows() + ft.nrows(), f.ncols());
                all.as_mut().submatrix_mut(0, 0, f.nrows(), f.ncols()).copy_from(f);
                all.as_mut()
                    .submatrix_mut(f.nrows(), 0, ft.nrows(), f.ncols())
                    .copy_from(&ft);
                let ids: Vec<usize> = ftr.domain_ids.iter().chain(&test_ids).copied().collect();
                let dg = feature_domain_gram(&all, &ids, n_all);
                (inner, cross, dg, Some(t.bound_terms()), Some(t.effective_rank))
            }
        };
        out.push(ExtractedKernels {
            method: cfg.method,
            inner,
            cross,
            domain_gram,
            train_ids: ftr.domain_ids.clone(),
            test_ids: test_ids.clone(),
            n_train_domains,
            sigma_x,
            sigma_y,
            bound,
            effective_rank,
        });
    }
    Ok(out)
}

/// Trains the ridge learner in one kernel setting and predicts on the test rows.
pub fn evaluate_setting(
    ek: &ExtractedKernels,
    y_train: &[f64],
    y_test: &[f64],
    setting: Setting,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        return Err(Error::Config("eta must be positive".into()));
    }
    let (gram, cross, sigma1) = match setting {
        Setting::Pooling => (ek.inner.clone(), ek.cross.clone(), None),
        Setting::Distributional => {
            let s1 = cfg
                .sigma1
                .unwrap_or_else(|| median_mmd_bandwidth(&ek.domain_gram, ek.n_train_domains));
            // The base kernel only documents how Ĝ was built; the inner
            // kernel is already evaluated.
            let spec = DistributionalKernelSpec {
                sigma1: s1,
                base: KernelSpec::Linear,
            };
            let g = distributional_gram(&ek.inner, &ek.domain_gram, &spec, &ek.train_ids, &ek.train_ids)?;
            let c = distributional_gram(&ek.cross, &ek.domain_gram, &spec, &ek.test_ids, &ek.train_ids)?;
            (g, c, Some(s1))
        }
    };

    let n = gram.nrows();
    let mean_diag = (0..n).map(|i| gram[(i, i)]).sum::<f64>() / n as f64;
    let ridge = cfg.eta * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let model = match cfg.task {
        Task::BinaryClassification => ridge_fit(&gram, y_train, ridge, cfg.task)?,
        Task::Regression => {
            let mean = y_train.iter().sum::<f64>() / y_train.len() as f64;
            let centered: Vec<f64> = y_train.iter().map(|v| v - mean).collect();
            RidgeModel {
                offset: mean,
                ..ridge_fit(&gram, &centered, ridge, cfg.task)?
            }
        }
    };
    let predictions = ridge_predict(&model, &cross)?;
    let metric = metrics(y_test, &predictions, cfg.task)?;
    Ok(PipelineOutcome {
        predictions,
        metric,
        sigma_x: ek.sigma_x,
        sigma_y: ek.sigma_y,
        sigma1,
        ridge,
        bound: ek.bound,
        effective_rank: ek.effective_rank,
    })
}

/// Fits on `train` and predicts on the unseen domains of `test`.
pub fn run_pipeline(
    train: &DomainDataset,
    test: &DomainDataset,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let y = targets(train, "training")?;
    let y_test = targets(test, "test")?;
    let ek = extract_kernels(train, test, cfg)?;
    evaluate_setting(&ek, &y, &y_test, cfg.setting, cfg)
}

/// Ĝ over train and test domains from the three kernel blocks.
fn block_mean_gram(
    tr: &Mat<f64>,
    cross: &Mat<f64>,
    tt: &Mat<f64>,
    train_ids: &[usize],
    test_ids: &[usize],
    n_domains: usize,
) -> DomainGram {
    let mut sums = vec![vec![0.0; n_domains]; n_domains];
    let mut add = |m: &Mat<f64>, ri: &[usize], ci: &[usize], mirror: bool| {
        for b in 0..m.ncols() {
            for a in 0..m.nrows() {
                sums[ri[a]][ci[b]] += m[(a, b)];
                if mirror {
                    sums[ci[b]][ri[a]] += m[(a, b)];
                }
            }
        }
    };
    add(tr, train_ids, train_ids, false);
    add(cross, test_ids, train_ids, true);
    add(tt, test_ids, test_ids, false);
    let mut counts = vec![0usize; n_domains];
    for &i in train_ids.iter().chain(test_ids) {
        counts[i] += 1;
    }
    let values = (0..n_domains)
        .map(|i| {
            (0..n_domains)
                .map(|j| sums[i][j] / (counts[i] * counts[j]) as f64)
                .collect()
        })
        .collect();
    DomainGram { values }
}

/// Result of a domain-wise cross-validation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub best_index: usize,
    pub best: PipelineConfig,
    /// Mean score per grid point (accuracy, or negated RMSE).
    pub mean_scores: Vec<f64>,
    /// `fold_scores[g][f]`.
    pub fold_scores: Vec<Vec<f64>>,
    /// Domain indices held out in each fold.
    pub folds: Vec<Vec<usize>>,
}

/// Round-robin assignment of domains to `min(10, N)` folds.
pub fn domain_folds(n_domains: usize) -> Vec<Vec<usize>> {
    let k = n_domains.min(10);
    let mut folds = vec![Vec::new(); k];
    for d in 0..n_domains {
        folds[d % k].push(d);
    }
    folds
}

/// Evaluates one config on every fold; the held-out fold is whole domains.
pub fn fold_scores(data: &DomainDataset, folds: &[Vec<usize>], cfg: &PipelineConfig) -> Result<Vec<f64>> {
    folds
        .iter()
        .map(|held| {
            let keep: Vec<usize> = (0..data.n_domains()).filter(|d| !held.contains(d)).collect();
            let train = data.subset(&keep)?;
            let test = data.subset(held)?;
            let out = run_pipeline(&train, &test, cfg)?;
            let y = targets(&test, "held-out")?;
            score(&y, &out.predictions, cfg.task)
        })
        .collect()
}

/// Picks the grid point with the best mean held-out score. Ties go to the
/// smaller `m`, then to the earlier grid index.
pub fn cross_validate(data: &DomainDataset, grid: &[PipelineConfig]) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Config("cross-validation grid is empty".into()));
    }
    if data.n_domains() < 2 {
        return Err(Error::Config(
            "domain-wise cross-validation needs at least two domains".into(),
        ));
    }
    let folds = domain_folds(data.n_domains());
    let fold_scores = grid
        .iter()
        .map(|cfg| fold_scores(data, &folds, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mean_scores: Vec<f64> = fold_scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let mut best_index = 0;
    for g in 1..grid.len() {
        let (a, b) = (mean_scores[g], mean_scores[best_index]);
        if a > b || (a == b && grid[g].m < grid[best_index].m) {
            best_index = g;
        }
    }
    Ok(CvResult {
        best_index,
        best: grid[best_index],
        mean_scores,
        fold_scores,
        folds,
    })
}

/// Ordinary least squares with an intercept on raw features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

pub fn lls_fit(x: &Mat<f64>, y: &[f64]) -> Result<LinearModel> {
    let (n, d) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Input(format!("{n} rows vs {} targets", y.len())));
    }
    if n <= d {
        return Err(Error::Input(format!(
            "least squares needs more than {d} rows, got {n}"
        )));
    }
    let design = Mat::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let rhs = Mat::from_fn(n, 1, |i, _| y[i]);
    let sol = design.col_piv_qr().solve_lstsq(&rhs);
    if (0..=d).any(|j| !sol[(j, 0)].is_finite()) {
        return Err(Error::Degenerate {
            column: 0,
            value: f64::NAN,
        });
    }
    Ok(LinearModel {
        intercept: sol[(0, 0)],
        weights: (1..=d).map(|j| sol[(j, 0)]).collect(),
    })
}

pub fn lls_predict(model: &LinearModel, x: &Mat<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.weights.len() {
        return Err(Error::Input("feature count mismatch".into()));
    }
    Ok((0..x.nrows())
        .map(|i| {
            model.intercept
                + model
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * x[(i, j)])
                    .sum::<f64>()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{domain_gram, DomainBlock};
    use crate::kernels::GramMatrix;
    use crate::matrix::{from_rows, max_abs_diff};
    use crate::synthdata::{make_classification, SynthClassConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn spec(s1: f64) -> DistributionalKernelSpec {
        DistributionalKernelSpec {
            sigma1: s1,
            base: KernelSpec::Linear,
        }
    }

    #[test]
    fn distributional_examples() {
        let inner = Mat::from_fn(3, 3, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
        let one = DomainGram {
            values: vec![vec![0.7]],
        };
        let g = distributional_gram(&inner, &one, &spec(1.0), &[0, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!(g, inner);

        let id = DomainGram {
            values: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let ones = Mat::from_fn(1, 1, |_, _| 1.0);
        let g = distributional_gram(&ones, &id, &spec(1.0), &[0], &[1]).unwrap();
        assert!((g[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g[(0, 0)] - 0.3679).abs() < 1e-4);

        assert!(distributional_gram(&ones, &id, &spec(1.0), &[2], &[0]).is_err());
        assert!(distributional_gram(&ones, &id, &spec(0.0), &[0], &[0]).is_err());
    }

    #[test]
    fn distributional_gram_is_psd() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let sizes = [4usize, 3, 5];
        let n: usize = sizes.iter().sum();
        let x = Mat::from_fn(n, 2, |i, _| rng.random_range(-1.0..1.0) + (i / 4) as f64);
        let k = KernelSpec::gaussian(0.8).unwrap();
        let inner = gram_of_rows(&k, &x);
        let dg = domain_gram(&GramMatrix::new(inner.clone(), sizes.to_vec(), false).unwrap());
        let ids = crate::domains::ids_from_sizes(&sizes);
        let g = distributional_gram(&inner, &dg, &DistributionalKernelSpec { sigma1: 0.5, base: k }, &ids, &ids)
            .unwrap();
        assert_eq!(crate::matrix::max_asymmetry(&g), 0.0);
        let na = nalgebra::DMatrix::from_fn(n, n, |i, j| g[(i, j)]);
        assert!(na.symmetric_eigenvalues().min() >= -1e-10);

        let wide = distributional_gram(&inner, &dg, &DistributionalKernelSpec { sigma1: 1e6, base: k }, &ids, &ids)
            .unwrap();
        assert!(max_abs_diff(&wide, &inner) < 1e-6);
    }

    #[test]
    fn ridge_examples() {
        let y = [0.5, -2.0, 3.0];
        let eta = 1e-3;
        let m = ridge_fit(&Mat::identity(3, 3), &y, eta, Task::Regression).unwrap();
        for (a, t) in m.alpha.iter().zip(&y) {
            assert!((a - t / (1.0 + eta)).abs() < 1e-15);
        }

        let dup = from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(ridge_fit(&dup, &[2.0, 2.0], 1e-6, Task::Regression).is_ok());

        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let b = Mat::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let g = b.transpose() * &b;
        let y: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let m = ridge_fit(&g, &y, 0.1, Task::Regression).unwrap();
        let a = Mat::from_fn(6, 1, |i, _| m.alpha[i]);
        let r = &add_diagonal(&g, 0.1) * &a;
        let resid: f64 = (0..6).map(|i| (r[(i, 0)] - y[i]).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(resid / ny < 1e-7);

        assert!(matches!(
            ridge_fit(&Mat::identity(2, 2), &[1.0, f64::NAN], 0.1, Task::Regression),
            Err(Error::Input(_))
        ));
        assert!(ridge_fit(&Mat::identity(3, 3), &[0.0, 1.0, 2.0], 0.1, Task::BinaryClassification).is_err());
    }

    #[test]
    fn ridge_interpolates_with_small_eta() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Mat::from_fn(8, 2, |_, _| rng.random_range(-2.0..2.0));
        let g = gram_of_rows(&KernelSpec::gaussian(1.0).unwrap(), &x);
        let y: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let eta = 1e-8;
        let m = ridge_fit(&g, &y, eta, Task::Regression).unwrap();
        let pred = ridge_predict(&m, &g).unwrap();
        let l1: f64 = m.alpha.iter().map(|a| a.abs()).sum();
        let bound = 10.0 * eta * l1 * 1.0;
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() <= bound, "{p} vs {t}");
        }
    }

    #[test]
    fn predict_zero_row_and_errors() {
        let m = ridge_fit(&Mat::identity(2, 2), &[3.0, 7.0], 0.1, Task::BinaryClassification).unwrap();
        assert_eq!(ridge_predict(&m, &Mat::zeros(1, 2)).unwrap(), vec![3.0]);
        let r = ridge_fit(&Mat::identity(2, 2), &[3.0, 7.0], 0.1, Task::Regression).unwrap();
        assert_eq!(ridge_predict(&r, &Mat::zeros(1, 2)).unwrap(), vec![0.0]);
        assert!(ridge_predict(&r, &Mat::zeros(1, 3)).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let n = 10;
        let x = Mat::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let xt = Mat::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] * 2.0 - x[(i, 2)]).collect();
        let k = KernelSpec::gaussian(0.9).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i * 3) % n).collect();
        let xp = Mat::from_fn(n, 3, |i, j| x[(perm[i], j)]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = ridge_fit(&gram_of_rows(&k, &x), &y, 1e-3, Task::Regression).unwrap();
        let b = ridge_fit(&gram_of_rows(&k, &xp), &yp, 1e-3, Task::Regression).unwrap();
        let pa = ridge_predict(&a, &kernel_between(&k, &xt, &x)).unwrap();
        let pb = ridge_predict(&b, &kernel_between(&k, &xt, &xp)).unwrap();
        for (u, v) in pa.iter().zip(&pb) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn label_swap_maps_predictions() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = Mat::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..12).map(|i| if x[(i, 0)] > 0.0 { 1.0 } else { 0.0 }).collect();
        let swapped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let k = KernelSpec::gaussian(1.0).unwrap();
        let g = gram_of_rows(&k, &x);
        let xt = Mat::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let c = kernel_between(&k, &xt, &x);
        let a = ridge_predict(&ridge_fit(&g, &y, 1e-2, Task::BinaryClassification).unwrap(), &c).unwrap();
        let b = ridge_predict(&ridge_fit(&g, &swapped, 1e-2, Task::BinaryClassification).unwrap(), &c).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(*u, 1.0 - v);
        }
    }

    #[test]
    fn metric_examples() {
        let y = [1.0, 0.0, 1.0];
        assert_eq!(metrics(&y, &y, Task::BinaryClassification).unwrap(), 1.0);
        assert_eq!(metrics(&y, &y, Task::Regression).unwrap(), 0.0);
        assert_eq!(metrics(&y, &[0.0, 1.0, 0.0], Task::BinaryClassification).unwrap(), 0.0);
        let r = metrics(&[0.0, 0.0], &[3.0, 4.0], Task::Regression).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((r - 3.5355).abs() < 1e-4);
        assert!(metrics(&[1.0], &[1.0, 2.0], Task::Regression).is_err());
    }

    fn small_classification() -> (DomainDataset, DomainDataset) {
        make_classification(&SynthClassConfig {
            n_domains: 4,
            n_test_domains: 2,
            per_domain_n: 25,
            dim: 3,
            seed: 9,
            ..SynthClassConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn folds_never_leak() {
        for n in 2..25 {
            let folds = domain_folds(n);
            assert_eq!(folds.len(), n.min(10));
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        let (train, _) = small_classification();
        let cfg = PipelineConfig::new(Method::Kpca, Setting::Pooling, Task::BinaryClassification);
        let cv = cross_validate(&train, &[cfg]).unwrap();
        for held in &cv.folds {
            let keep: Vec<usize> = (0..train.n_domains()).filter(|d| !held.contains(d)).collect();
            let sub = train.subset(&keep).unwrap();
            let held_ids: Vec<i64> = held.iter().map(|&d| train.domains()[d].id).collect();
            assert!(sub.domains().iter().all(|b| !held_ids.contains(&b.id)));
        }
    }

    #[test]
    fn cv_selection_rules() {
        let (train, _) = small_classification();
        let base = PipelineConfig::new(Method::Dica, Setting::Distributional, Task::BinaryClassification);
        assert!(cross_validate(&train, &[]).is_err());

        let single = cross_validate(&train, &[base]).unwrap();
        assert_eq!(single.best, base);

        let dup = cross_validate(&train, &[base, base]).unwrap();
        assert_eq!(dup.best_index, 0);
        assert_eq!(dup.mean_scores[0], dup.mean_scores[1]);

        let alt = PipelineConfig { m: 2, ..base };
        let cv = cross_validate(&train, &[base, alt]).unwrap();
        let again = fold_scores(&train, &cv.folds, &cv.best).unwrap();
        assert_eq!(again, cv.fold_scores[cv.best_index]);

        let one = DomainDataset::new(vec![train.domains()[0].clone()]).unwrap();
        assert!(matches!(cross_validate(&one, &[base]), Err(Error::Config(_))));
    }

    #[test]
    fn pipelines_run_for_every_method() {
        let (train, test) = small_classification();
        for method in Method::ALL {
            for setting in Setting::ALL {
                let cfg = PipelineConfig {
                    m: 3,
                    ..PipelineConfig::new(method, setting, Task::BinaryClassification)
                };
                let out = run_pipeline(&train, &test, &cfg).unwrap();
                assert_eq!(out.predictions.len(), test.total_len());
                assert!((0.0..=1.0).contains(&out.metric));
                assert_eq!(out.sigma1.is_some(), setting == Setting::Distributional);
            }
        }
    }

    #[test]
    fn separable_classes_are_learned() {
        let (train, _) = make_classification(&SynthClassConfig {
            n_domains: 3,
            n_test_domains: 1,
            per_domain_n: 40,
            dim: 3,
            class_separation: 10.0,
            seed: 10,
            ..SynthClassConfig::default()
        })
        .unwrap();
        let cfg = PipelineConfig::new(Method::Input, Setting::Pooling, Task::BinaryClassification);
        let out = run_pipeline(&train, &train, &cfg).unwrap();
        assert!(out.metric >= 0.99, "{}", out.metric);
    }

    #[test]
    fn lls_recovers_linear_targets() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = Mat::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..30).map(|i| 2.0 + x[(i, 0)] - 3.0 * x[(i, 2)]).collect();
        let m = lls_fit(&x, &y).unwrap();
        assert!((m.intercept - 2.0).abs() < 1e-10);
        assert!((m.weights[2] + 3.0).abs() < 1e-10);
        let p = lls_predict(&m, &x).unwrap();
        assert!(metrics(&y, &p, Task::Regression).unwrap() < 1e-10);

        let constant = vec![4.0; 30];
        let c = lls_fit(&x, &constant).unwrap();
        assert!(metrics(&constant, &lls_predict(&c, &x).unwrap(), Task::Regression).unwrap() < 1e-10);
    }

    #[test]
    fn regression_pipeline_centers_targets() {
        let blocks = (0..3)
            .map(|d| {
                let x = Mat::from_fn(10, 2, |i, j| (i * (j + 1) + d) as f64 * 0.1);
                let y = vec![50.0; 10];
                DomainBlock::new(d as i64, x, Some(y)).unwrap()
            })
            .collect();
        let data = DomainDataset::new(blocks).unwrap();
        let test = data.subset(&[2]).unwrap();
        let train = data.subset(&[0, 1]).unwrap();
        let cfg = PipelineConfig::new(Method::Input, Setting::Pooling, Task::Regression);
        let out = run_pipeline(&train, &test, &cfg).unwrap();
        assert!(out.metric < 1e-9);
    }
}

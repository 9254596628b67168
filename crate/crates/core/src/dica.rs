//! The four fits (DICA, UDICA, COIR, KPCA), projection through the learned
//! transform, and the trace diagnostics of the generalization bound.
//!
//! All modes solve `A B = C B Γ` on the centered training Gram `K`:
//!
//! | mode  | A                  | C              |
//! |-------|--------------------|----------------|
//! | dica  | (1/n) K S K        | KQK + K + λI   |
//! | udica | (1/n) K²           | KQK + K + λI   |
//! | coir  | (1/n) K S K        | K + λI         |
//! | kpca  | K                  | I              |
//!
//! with `S = L(L + nεI)⁻¹` on the centered output Gram `L`.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::domains::{block_column_sums, block_weights, DomainDataset};
use crate::eigen::{self, EigenResult, DEFAULT_IMAG_TOL};
use crate::error::{Error, Result};
use crate::kernels::{
    center_cross_with, center_gram, gram_of_rows, kernel_between, pooled_gram, CenteringStats,
    CrossGram, GramMatrix, KernelSpec,
};
use crate::matrix::{add_diagonal, symmetrize, trace_of_product, MatrixDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dica,
    Udica,
    Coir,
    Kpca,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Kpca, Mode::Udica, Mode::Coir, Mode::Dica];

    pub fn supervised(self) -> bool {
        matches!(self, Mode::Dica | Mode::Coir)
    }

    /// Whether the distributional-variance term enters the constraint.
    pub fn domain_aware(self) -> bool {
        matches!(self, Mode::Dica | Mode::Udica)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Dica => "dica",
            Mode::Udica => "udica",
            Mode::Coir => "coir",
            Mode::Kpca => "kpca",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dica" => Ok(Mode::Dica),
            "udica" => Ok(Mode::Udica),
            "coir" => Ok(Mode::Coir),
            "kpca" => Ok(Mode::Kpca),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// How the generalized eigenproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenRoute {
    /// `C = RRᵀ`, symmetric eigendecomposition of `R⁻¹AR⁻ᵀ`.
    #[default]
    SymmetricDefinite,
    /// Dense nonsymmetric eigendecomposition of `C⁻¹A`.
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: Mode,
    pub m: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub imag_tol: f64,
    #[serde(default)]
    pub route: EigenRoute,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: Mode::Dica,
            m: 2,
            epsilon: 1e-4,
            lambda: 1e-4,
            imag_tol: DEFAULT_IMAG_TOL,
            route: EigenRoute::SymmetricDefinite,
        }
    }
}

impl FitConfig {
    pub fn new(mode: Mode, m: usize) -> Self {
        FitConfig {
            mode,
            m,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.mode.supervised() && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive for {}, got {}",
                self.mode, self.epsilon
            )));
        }
        if self.mode != Mode::Kpca && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive for {}, got {}",
                self.mode, self.lambda
            )));
        }
        if !(self.imag_tol >= 0.0) {
            return Err(Error::Config("imag_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// The assembled eigenproblem, exposed for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct FitProblem {
    /// Centered training Gram.
    pub k: GramMatrix,
    pub centering: CenteringStats,
    /// `L(L + nεI)⁻¹`, symmetrized; supervised modes only.
    pub s: Option<Mat<f64>>,
    pub a: Mat<f64>,
    pub c: Mat<f64>,
}

/// `KQK` through the factorization `Q = E W Eᵀ`.
pub fn kqk(k: &Mat<f64>, domain_sizes: &[usize]) -> Result<Mat<f64>> {
    let ke = block_column_sums(k, domain_sizes);
    let w = block_weights(domain_sizes)?;
    let mut out = &(&ke * &w) * ke.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// `L(L + nεI)⁻¹` for a centered output Gram, symmetrized.
pub fn output_operator(l: &Mat<f64>, epsilon: f64) -> Result<Mat<f64>> {
    let n = l.nrows() as f64;
    // L and (L + nεI)⁻¹ commute, so solving from the left gives the same matrix.
    let mut s = eigen::solve_spd(&add_diagonal(l, n * epsilon), l)?;
    symmetrize(&mut s);
    Ok(s)
}

/// Mode-independent pieces of a fit on one dataset and kernel pair. Building
/// this once and fitting several modes from it avoids recomputing the Gram,
/// the output operator and the `KQK`/`KSK` products.
#[derive(Debug, Clone)]
pub struct Prepared {
    k: GramMatrix,
    centering: CenteringStats,
    kqk: Mat<f64>,
    /// `(S, (1/n)KSK)` for the ε it was built with.
    supervised: Option<(f64, Mat<f64>, Mat<f64>)>,
    train_inputs: Mat<f64>,
    kx: KernelSpec,
    ky: KernelSpec,
}

impl Prepared {
    /// `epsilon` builds the supervised pieces; pass `None` for kpca/udica only.
    pub fn new(
        data: &DomainDataset,
        kx: &KernelSpec,
        ky: &KernelSpec,
        epsilon: Option<f64>,
    ) -> Result<Self> {
        let raw = pooled_gram(kx, data, false)?;
        let centering = CenteringStats::from_uncentered(&raw.values);
        let k = center_gram(&raw);
        drop(raw);
        let kqk = kqk(&k.values, &k.domain_sizes)?;
        let supervised = match epsilon {
            None => None,
            Some(eps) => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
                }
                if !data.has_outputs() {
                    return Err(Error::Input(
                        "supervised modes require outputs on every training domain".into(),
                    ));
                }
                let l = center_gram(&pooled_gram(ky, data, true)?);
                let s = output_operator(&l.values, eps)?;
                let kv = &k.values;
                let mut a = (kv * &(&s * kv)) * faer::Scale(1.0 / k.n() as f64);
                symmetrize(&mut a);
                Some((eps, s, a))
            }
        };
        Ok(Prepared {
            k,
            centering,
            kqk,
            supervised,
            train_inputs: data.flatten().inputs,
            kx: *kx,
            ky: *ky,
        })
    }

    pub fn n(&self) -> usize {
        self.k.n()
    }

    pub fn problem(&self, config: &FitConfig) -> Result<FitProblem> {
        config.validate()?;
        let n = self.n();
        if config.m > n {
            return Err(Error::Input(format!(
                "m = {} exceeds the {n} training samples",
                config.m
            )));
        }
        let kv = &self.k.values;
        let sup = if config.mode.supervised() {
            match &self.supervised {
                Some((eps, s, a)) if *eps == config.epsilon => Some((s, a)),
                Some((eps, ..)) => {
                    return Err(Error::Config(format!(
                        "prepared with epsilon {eps}, config asks for {}",
                        config.epsilon
                    )))
                }
                None => {
                    return Err(Error::Config(format!(
                        "{} needs the output operator; prepare with an epsilon",
                        config.mode
                    )))
                }
            }
        } else {
            None
        };
        let constraint = |with_q: bool| {
            let mut c = add_diagonal(kv, config.lambda);
            if with_q {
                c += &self.kqk;
            }
            symmetrize(&mut c);
            c
        };
        let (a, c) = match config.mode {
            Mode::Kpca => (kv.clone(), Mat::<f64>::identity(n, n)),
            Mode::Udica => {
                let mut a = (kv * kv) * faer::Scale(1.0 / n as f64);
                symmetrize(&mut a);
                (a, constraint(true))
            }
            Mode::Dica | Mode::Coir => {
                let (_, a) = sup.expect("supervised modes resolved above");
                (a.clone(), constraint(config.mode == Mode::Dica))
            }
        };
        Ok(FitProblem {
            k: self.k.clone(),
            centering: self.centering.clone(),
            s: sup.map(|(s, _)| s.clone()),
            a,
            c,
        })
    }

    pub fn fit(&self, config: &FitConfig) -> Result<Transform> {
        let problem = self.problem(config)?;
        let solved = solve(&problem, config)?;
        let lead = solved.values.first().copied().unwrap_or(0.0);
        let effective_rank = solved
            .values
            .iter()
            .filter(|&&g| lead > 0.0 && g > 1e-12 * lead)
            .count();
        let features = &problem.k.values * &solved.vectors;
        Ok(Transform {
            b: solved.vectors,
            gamma: solved.values,
            config: *config,
            domain_sizes: problem.k.domain_sizes.clone(),
            kx: self.kx,
            ky: self.ky,
            effective_rank,
            max_imag: solved.max_imag,
            spectral_radius: solved.spectral_radius,
            train_inputs: self.train_inputs.clone(),
            train_gram: problem.k,
            centering: problem.centering,
            features,
        })
    }
}

fn prepare_for(
    data: &DomainDataset,
    kx: &KernelSpec,
    ky: &KernelSpec,
    config: &FitConfig,
) -> Result<Prepared> {
    config.validate()?;
    if config.mode.supervised() && !data.has_outputs() {
        return Err(Error::Input(format!(
            "{} requires outputs on every training domain",
            config.mode
        )));
    }
    Prepared::new(data, kx, ky, config.mode.supervised().then_some(config.epsilon))
}

pub fn assemble(
    data: &DomainDataset,
    kx: &KernelSpec,
    ky: &KernelSpec,
    config: &FitConfig,
) -> Result<FitProblem> {
    prepare_for(data, kx, ky, config)?.problem(config)
}

/// `tr(BᵀAB) / tr(BᵀCB)`.
pub fn rayleigh_quotient(a: &Mat<f64>, c: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let num = trace_of_product(&b.transpose().to_owned(), &(a * b));
    let den = trace_of_product(&b.transpose().to_owned(), &(c * b));
    num / den
}

/// A fitted transform. Immutable once built.
#[derive(Debug, Clone)]
pub struct Transform {
    pub b: Mat<f64>,
    pub gamma: Vec<f64>,
    pub config: FitConfig,
    pub domain_sizes: Vec<usize>,
    pub kx: KernelSpec,
    pub ky: KernelSpec,
    /// Number of eigenvalues above `1e-12 · γ₁`.
    pub effective_rank: usize,
    pub max_imag: f64,
    pub spectral_radius: f64,
    train_inputs: Mat<f64>,
    train_gram: GramMatrix,
    centering: CenteringStats,
    features: Mat<f64>,
}

/// Projected kernel: `K̃ = KBBᵀK` (train) or `K̃ᵗ = KᵗBBᵀK` (test).
#[derive(Debug, Clone)]
pub struct ProjectedKernel {
    pub values: Mat<f64>,
    pub train: bool,
}

/// The two trace terms of the generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `tr(BᵀKQKB)`, the empirical distributional variance after the transform.
    pub projected_variance: f64,
    /// `(1/N) tr(BᵀKQKB)`.
    pub dist_term: f64,
    /// `tr(BᵀKB)`.
    pub complexity_term: f64,
}

pub fn fit(
    data: &DomainDataset,
    kx: &KernelSpec,
    ky: &KernelSpec,
    config: &FitConfig,
) -> Result<Transform> {
    prepare_for(data, kx, ky, config)?.fit(config)
}

/// Solves an assembled problem with the configured eigen route.
pub fn solve(problem: &FitProblem, config: &FitConfig) -> Result<EigenResult> {
    match (config.mode, config.route) {
        (Mode::Kpca, _) => eigen::top_eig_symmetric(&problem.a, config.m),
        (_, EigenRoute::SymmetricDefinite) => {
            eigen::generalized_symmetric(&problem.a, &problem.c, config.m)
        }
        (_, EigenRoute::General) => {
            eigen::generalized_general(&problem.a, &problem.c, config.m, config.imag_tol)
        }
    }
}

impl Transform {
    pub fn n_train(&self) -> usize {
        self.b.nrows()
    }

    /// Centered training Gram used in the fit.
    pub fn train_gram(&self) -> &GramMatrix {
        &self.train_gram
    }

    pub fn centering(&self) -> &CenteringStats {
        &self.centering
    }

    pub fn train_inputs(&self) -> &Mat<f64> {
        &self.train_inputs
    }

    /// Training features `KB` (`n × m`).
    pub fn features_train(&self) -> &Mat<f64> {
        &self.features
    }

    /// Test features `KᵗB` from a training-centered cross Gram.
    pub fn features_test(&self, cg: &CrossGram) -> Result<Mat<f64>> {
        if !cg.centered {
            return Err(Error::Input(
                "cross gram must be centered against training statistics".into(),
            ));
        }
        if cg.values.ncols() != self.n_train() {
            return Err(Error::Input(format!(
                "cross gram has {} columns, transform was fitted on {}",
                cg.values.ncols(),
                self.n_train()
            )));
        }
        Ok(&cg.values * &self.b)
    }

    /// Centered cross Gram of new points against the training sample.
    pub fn cross_gram(&self, points: &Mat<f64>) -> Result<CrossGram> {
        if points.ncols() != self.train_inputs.ncols() {
            return Err(Error::Input(format!(
                "points have dimension {}, transform expects {}",
                points.ncols(),
                self.train_inputs.ncols()
            )));
        }
        let raw = kernel_between(&self.kx, points, &self.train_inputs);
        Ok(CrossGram {
            values: center_cross_with(&raw, &self.centering)?,
            train_sizes: self.domain_sizes.clone(),
            centered: true,
        })
    }

    /// Features of new points: `KᵗB` after training-consistent centering.
    pub fn features_for(&self, points: &Mat<f64>) -> Result<Mat<f64>> {
        self.features_test(&self.cross_gram(points)?)
    }

    pub fn project_train(&self) -> ProjectedKernel {
        let f = &self.features;
        let mut values = f * f.transpose();
        symmetrize(&mut values);
        ProjectedKernel {
            values,
            train: true,
        }
    }

    pub fn project_test(&self, cg: &CrossGram) -> Result<ProjectedKernel> {
        let ft = self.features_test(cg)?;
        Ok(ProjectedKernel {
            values: &ft * self.features.transpose(),
            train: false,
        })
    }

    pub fn bound_terms(&self) -> BoundTerms {
        let nd = self.domain_sizes.len();
        // Eᵀ(KB): per-domain sums of feature rows.
        let g = block_column_sums(&self.features.transpose().to_owned(), &self.domain_sizes);
        let w = block_weights(&self.domain_sizes).expect("fitted transform has valid sizes");
        let projected_variance = trace_of_product(&(&g * &w), &g.transpose().to_owned());
        let complexity_term = trace_of_product(&self.b.transpose().to_owned(), &self.features);
        BoundTerms {
            projected_variance,
            dist_term: projected_variance / nd as f64,
            complexity_term,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TransformDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TransformDoc = serde_json::from_str(s)?;
        Transform::try_from(doc)
    }
}

const FORMAT: &str = "dica-transform/1";

/// Self-describing serialized transform. The training Gram is rebuilt from
/// the stored inputs on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformDoc {
    pub format: String,
    pub config: FitConfig,
    pub kx: KernelSpec,
    pub ky: KernelSpec,
    pub domain_sizes: Vec<usize>,
    pub b: MatrixDoc,
    pub gamma: Vec<f64>,
    pub effective_rank: usize,
    pub max_imag: f64,
    pub spectral_radius: f64,
    pub train_inputs: MatrixDoc,
}

impl From<&Transform> for TransformDoc {
    fn from(t: &Transform) -> Self {
        TransformDoc {
            format: FORMAT.into(),
            config: t.config,
            kx: t.kx,
            ky: t.ky,
            domain_sizes: t.domain_sizes.clone(),
            b: MatrixDoc::from(&t.b),
            gamma: t.gamma.clone(),
            effective_rank: t.effective_rank,
            max_imag: t.max_imag,
            spectral_radius: t.spectral_radius,
            train_inputs: MatrixDoc::from(&t.train_inputs),
        }
    }
}

impl TryFrom<TransformDoc> for Transform {
    type Error = Error;

    fn try_from(doc: TransformDoc) -> Result<Self> {
        if doc.format != FORMAT {
            return Err(Error::Input(format!(
                "unsupported transform format `{}`",
                doc.format
            )));
        }
        doc.config.validate()?;
        doc.kx.validate()?;
        let malformed = |what: &str| Error::Input(format!("malformed transform: {what}"));
        let b = doc.b.to_mat().ok_or_else(|| malformed("b"))?;
        let train_inputs = doc
            .train_inputs
            .to_mat()
            .ok_or_else(|| malformed("train_inputs"))?;
        let n: usize = doc.domain_sizes.iter().sum();
        if b.nrows() != n || train_inputs.nrows() != n || b.ncols() != doc.gamma.len() {
            return Err(malformed("inconsistent shapes"));
        }
        let raw = GramMatrix::new(
            gram_of_rows(&doc.kx, &train_inputs),
            doc.domain_sizes.clone(),
            false,
        )?;
        let centering = CenteringStats::from_uncentered(&raw.values);
        let train_gram = center_gram(&raw);
        let features = &train_gram.values * &b;
        Ok(Transform {
            b,
            gamma: doc.gamma,
            config: doc.config,
            domain_sizes: doc.domain_sizes,
            kx: doc.kx,
            ky: doc.ky,
            effective_rank: doc.effective_rank,
            max_imag: doc.max_imag,
            spectral_radius: doc.spectral_radius,
            train_inputs,
            train_gram,
            centering,
            features,
        })
    }
}

//! Kernel evaluation, pooled and cross Gram matrices, and centering.
//!
//! Gram matrices are dense and built over the domain-major flattened sample.
//! Centering uses the pooled training mean in feature space: `HKH` with
//! `H = I - (1/n)𝟙𝟙ᵀ` for training Grams, and the same training statistics
//! for test rows so that test features live in the training-centered space.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::domains::DomainDataset;
use crate::error::{Error, Result};

/// A positive definite kernel on real vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `exp(-‖x - z‖² / (2σ²))`
    GaussianRbf { bandwidth: f64 },
    /// `⟨x, z⟩`
    Linear,
    /// 1 if the (integer-valued) labels are equal, 0 otherwise.
    Delta,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec::GaussianRbf { bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::GaussianRbf { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::Config(format!(
                    "gaussian-rbf bandwidth must be positive and finite, got {bandwidth}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Evaluates the kernel with full validation.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.validate()?;
        if x.len() != z.len() {
            return Err(Error::Input(format!(
                "dimension mismatch: {} vs {}",
                x.len(),
                z.len()
            )));
        }
        if matches!(self, KernelSpec::Delta) {
            check_labels(x)?;
            check_labels(z)?;
        }
        Ok(self.eval_unchecked(x, z))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::GaussianRbf { bandwidth } => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Linear => x.iter().zip(z).map(|(a, b)| a * b).sum(),
            KernelSpec::Delta => {
                if x == z {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::GaussianRbf { .. } => "gaussian-rbf",
            KernelSpec::Linear => "linear",
            KernelSpec::Delta => "delta",
        }
    }
}

fn check_labels(v: &[f64]) -> Result<()> {
    if v.iter().all(|a| a.is_finite() && a.fract() == 0.0) {
        Ok(())
    } else {
        Err(Error::Input(
            "delta kernel requires discrete (integer-valued) labels".into(),
        ))
    }
}

fn check_label_matrix(m: &Mat<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let a = m[(i, j)];
            if !(a.is_finite() && a.fract() == 0.0) {
                return Err(Error::Input(
                    "delta kernel requires discrete (integer-valued) labels".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Free-function form of [`KernelSpec::eval`].
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    spec.eval(x, z)
}

/// Symmetric pooled Gram matrix with domain-boundary metadata.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: Mat<f64>,
    pub domain_sizes: Vec<usize>,
    pub centered: bool,
}

impl GramMatrix {
    pub fn new(values: Mat<f64>, domain_sizes: Vec<usize>, centered: bool) -> Result<Self> {
        let n: usize = domain_sizes.iter().sum();
        if values.nrows() != values.ncols() || values.nrows() != n {
            return Err(Error::Input(format!(
                "gram is {}x{} but domain sizes sum to {n}",
                values.nrows(),
                values.ncols()
            )));
        }
        if domain_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Input("empty domain block".into()));
        }
        Ok(GramMatrix {
            values,
            domain_sizes,
            centered,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Start offset of every domain block in flattened order.
    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.domain_sizes)
    }
}

pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

/// Kernel between test rows and the flattened training sample.
#[derive(Debug, Clone)]
pub struct CrossGram {
    pub values: Mat<f64>,
    pub train_sizes: Vec<usize>,
    pub centered: bool,
}

/// Training-set statistics needed to center test rows consistently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    pub column_means: Vec<f64>,
    pub grand_mean: f64,
}

impl CenteringStats {
    pub fn from_uncentered(k: &Mat<f64>) -> Self {
        let n = k.nrows();
        let inv = 1.0 / n as f64;
        let column_means: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| k[(i, j)]).sum::<f64>() * inv)
            .collect();
        let grand_mean = column_means.iter().sum::<f64>() * inv;
        CenteringStats {
            column_means,
            grand_mean,
        }
    }
}

/// Gram matrix over the rows of `points`; only one triangle is evaluated.
pub fn gram_of_rows(spec: &KernelSpec, points: &Mat<f64>) -> Mat<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| crate::matrix::row(points, i)).collect();
    let mut g = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = spec.eval_unchecked(&rows[i], &rows[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn kernel_between(spec: &KernelSpec, a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let ra: Vec<Vec<f64>> = (0..a.nrows()).map(|i| crate::matrix::row(a, i)).collect();
    let rb: Vec<Vec<f64>> = (0..b.nrows()).map(|i| crate::matrix::row(b, i)).collect();
    Mat::from_fn(a.nrows(), b.nrows(), |i, j| spec.eval_unchecked(&ra[i], &rb[j]))
}

/// Uncentered Gram over the flattened dataset, on inputs or on outputs.
pub fn pooled_gram(spec: &KernelSpec, data: &DomainDataset, on_outputs: bool) -> Result<GramMatrix> {
    spec.validate()?;
    let flat = data.flatten();
    let points = if on_outputs {
        let y = flat.outputs.ok_or_else(|| {
            Error::Input("output kernel requested but the dataset carries no outputs".into())
        })?;
        Mat::from_fn(y.len(), 1, |i, _| y[i])
    } else {
        flat.inputs
    };
    if matches!(spec, KernelSpec::Delta) {
        check_label_matrix(&points)?;
    }
    Ok(GramMatrix {
        values: gram_of_rows(spec, &points),
        domain_sizes: data.domain_sizes(),
        centered: false,
    })
}

/// `HKH` with `H = I - (1/n)𝟙𝟙ᵀ`.
pub fn center_gram(g: &GramMatrix) -> GramMatrix {
    let stats = CenteringStats::from_uncentered(&g.values);
    let n = g.n();
    let mut values = Mat::from_fn(n, n, |i, j| {
        g.values[(i, j)] - stats.column_means[i] - stats.column_means[j] + stats.grand_mean
    });
    crate::matrix::symmetrize(&mut values);
    GramMatrix {
        values,
        domain_sizes: g.domain_sizes.clone(),
        centered: true,
    }
}

/// Cross Gram `values[t, a] = k(x_t, x_a)` against the flattened training sample.
pub fn cross_gram(spec: &KernelSpec, test: &Mat<f64>, train: &DomainDataset) -> Result<CrossGram> {
    spec.validate()?;
    if test.ncols() != train.dim() {
        return Err(Error::Input(format!(
            "test dimension {} does not match training dimension {}",
            test.ncols(),
            train.dim()
        )));
    }
    let flat = train.flatten();
    if matches!(spec, KernelSpec::Delta) {
        check_label_matrix(test)?;
        check_label_matrix(&flat.inputs)?;
    }
    Ok(CrossGram {
        values: kernel_between(spec, test, &flat.inputs),
        train_sizes: train.domain_sizes(),
        centered: false,
    })
}

/// `(Kᵗ - (1/n)𝟙𝟙ᵀK) H` using the uncentered training Gram `K`.
pub fn center_cross_gram(cg: &CrossGram, train_gram: &GramMatrix) -> Result<CrossGram> {
    if train_gram.centered {
        return Err(Error::Input(
            "test rows must be centered against the uncentered training gram".into(),
        ));
    }
    let stats = CenteringStats::from_uncentered(&train_gram.values);
    let values = center_cross_with(&cg.values, &stats)?;
    Ok(CrossGram {
        values,
        train_sizes: cg.train_sizes.clone(),
        centered: true,
    })
}

pub(crate) fn center_cross_with(kt: &Mat<f64>, stats: &CenteringStats) -> Result<Mat<f64>> {
    let n = stats.column_means.len();
    if kt.ncols() != n {
        return Err(Error::Input(format!(
            "cross gram has {} columns, training sample has {n}",
            kt.ncols()
        )));
    }
    let inv = 1.0 / n as f64;
    let row_means: Vec<f64> = (0..kt.nrows())
        .map(|t| (0..n).map(|a| kt[(t, a)]).sum::<f64>() * inv)
        .collect();
    Ok(Mat::from_fn(kt.nrows(), n, |t, a| {
        kt[(t, a)] - row_means[t] - stats.column_means[a] + stats.grand_mean
    }))
}

/// Median pairwise Euclidean distance between rows; falls back to 1 when
/// every pair coincides.
pub fn median_bandwidth(points: &Mat<f64>) -> f64 {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| crate::matrix::row(points, i)).collect();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(d2.sqrt());
        }
    }
    match median(&mut d) {
        Some(m) if m > 0.0 => m,
        _ => 1.0,
    }
}

/// Median of a slice (mean of the two middle values for even lengths).
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

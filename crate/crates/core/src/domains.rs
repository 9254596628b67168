//! Multi-domain datasets, the coefficient matrix Q, the between-domain Gram,
//! distributional variance and MMD.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{offsets, GramMatrix};

/// One domain: an `nᵢ × d` sample with optional outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBlock {
    pub id: i64,
    inputs: Mat<f64>,
    outputs: Option<Vec<f64>>,
}

impl DomainBlock {
    pub fn new(id: i64, inputs: Mat<f64>, outputs: Option<Vec<f64>>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Input(format!("domain {id} has no samples")));
        }
        if inputs.ncols() == 0 {
            return Err(Error::Input(format!("domain {id} has zero input dimension")));
        }
        if let Some(y) = &outputs {
            if y.len() != inputs.nrows() {
                return Err(Error::Input(format!(
                    "domain {id}: {} outputs for {} samples",
                    y.len(),
                    inputs.nrows()
                )));
            }
        }
        Ok(DomainBlock { id, inputs, outputs })
    }

    pub fn inputs(&self) -> &Mat<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> Option<&[f64]> {
        self.outputs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// `N ≥ 1` domains sharing an input dimension; flattened order is domain-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    domains: Vec<DomainBlock>,
}

/// Domain-major concatenation of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Flattened {
    pub inputs: Mat<f64>,
    pub outputs: Option<Vec<f64>>,
    pub domain_ids: Vec<usize>,
}

impl DomainDataset {
    pub fn new(domains: Vec<DomainBlock>) -> Result<Self> {
        let first = domains
            .first()
            .ok_or_else(|| Error::Input("dataset has no domains".into()))?;
        let d = first.inputs.ncols();
        let has_outputs = first.outputs.is_some();
        for b in &domains {
            if b.inputs.ncols() != d {
                return Err(Error::Input(format!(
                    "domain {} has dimension {}, expected {d}",
                    b.id,
                    b.inputs.ncols()
                )));
            }
            if b.outputs.is_some() != has_outputs {
                return Err(Error::Input(
                    "outputs must be present for all domains or for none".into(),
                ));
            }
        }
        Ok(DomainDataset { domains })
    }

    pub fn domains(&self) -> &[DomainBlock] {
        &self.domains
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn dim(&self) -> usize {
        self.domains[0].inputs.ncols()
    }

    pub fn has_outputs(&self) -> bool {
        self.domains[0].outputs.is_some()
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.domains.iter().map(DomainBlock::len).collect()
    }

    pub fn total_len(&self) -> usize {
        self.domains.iter().map(DomainBlock::len).sum()
    }

    pub fn flatten(&self) -> Flattened {
        let n = self.total_len();
        let d = self.dim();
        let mut inputs = Mat::<f64>::zeros(n, d);
        let mut outputs = self.has_outputs().then(|| Vec::with_capacity(n));
        let mut domain_ids = Vec::with_capacity(n);
        let mut r = 0;
        for (k, b) in self.domains.iter().enumerate() {
            for i in 0..b.len() {
                for j in 0..d {
                    inputs[(r, j)] = b.inputs[(i, j)];
                }
                domain_ids.push(k);
                r += 1;
            }
            if let (Some(out), Some(y)) = (outputs.as_mut(), b.outputs.as_ref()) {
                out.extend_from_slice(y);
            }
        }
        Flattened {
            inputs,
            outputs,
            domain_ids,
        }
    }

    /// Keeps the listed domains, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(indices.len());
        for &i in indices {
            let b = self
                .domains
                .get(i)
                .ok_or_else(|| Error::Input(format!("domain index {i} out of range")))?;
            blocks.push(b.clone());
        }
        DomainDataset::new(blocks)
    }

    /// Concatenation of this dataset's domains followed by `other`'s.
    pub fn concat(&self, other: &DomainDataset) -> Result<Self> {
        let mut blocks = self.domains.clone();
        blocks.extend(other.domains.iter().cloned());
        DomainDataset::new(blocks)
    }
}

/// Inverse of [`DomainDataset::flatten`]: rows with equal `domain_ids` become
/// one block, blocks ordered by id. Block ids are the group indices.
pub fn regroup(flat: &Flattened) -> Result<DomainDataset> {
    let n = flat.inputs.nrows();
    if flat.domain_ids.len() != n {
        return Err(Error::Input("domain_ids length does not match rows".into()));
    }
    let groups = flat.domain_ids.iter().copied().max().map_or(0, |m| m + 1);
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (a, &k) in flat.domain_ids.iter().enumerate() {
        rows[k].push(a);
    }
    let blocks = rows
        .into_iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .map(|(k, r)| {
            let inputs = Mat::from_fn(r.len(), flat.inputs.ncols(), |i, j| flat.inputs[(r[i], j)]);
            let outputs = flat.outputs.as_ref().map(|y| r.iter().map(|&a| y[a]).collect());
            DomainBlock::new(k as i64, inputs, outputs)
        })
        .collect::<Result<Vec<_>>>()?;
    DomainDataset::new(blocks)
}

/// Dense block-constant Q.
#[derive(Debug, Clone)]
pub struct CoefficientMatrix {
    pub values: Mat<f64>,
    pub domain_sizes: Vec<usize>,
}

/// The `N × N` block weights of Q: `(N−1)/(N²nᵢ²)` on the diagonal and
/// `−1/(N²nᵢnⱼ)` off it.
pub fn block_weights(domain_sizes: &[usize]) -> Result<Mat<f64>> {
    check_sizes(domain_sizes)?;
    let nn = domain_sizes.len() as f64;
    let n2 = nn * nn;
    Ok(Mat::from_fn(domain_sizes.len(), domain_sizes.len(), |i, j| {
        let (a, b) = (domain_sizes[i] as f64, domain_sizes[j] as f64);
        if i == j {
            (nn - 1.0) / (n2 * a * a)
        } else {
            -1.0 / (n2 * a * b)
        }
    }))
}

fn check_sizes(domain_sizes: &[usize]) -> Result<()> {
    if domain_sizes.is_empty() {
        return Err(Error::Input("empty domain size list".into()));
    }
    if domain_sizes.contains(&0) {
        return Err(Error::Input("domain sizes must be positive".into()));
    }
    Ok(())
}

pub fn coefficient_matrix(domain_sizes: &[usize]) -> Result<CoefficientMatrix> {
    let w = block_weights(domain_sizes)?;
    let ids = ids_from_sizes(domain_sizes);
    let n = ids.len();
    Ok(CoefficientMatrix {
        values: Mat::from_fn(n, n, |a, b| w[(ids[a], ids[b])]),
        domain_sizes: domain_sizes.to_vec(),
    })
}

pub(crate) fn ids_from_sizes(domain_sizes: &[usize]) -> Vec<usize> {
    domain_sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
        .collect()
}

/// Per-domain column sums: `KE` where `E` is the `n × N` domain indicator.
/// With `W = block_weights`, `Q = E W Eᵀ` and `KQK = (KE) W (KE)ᵀ`.
pub(crate) fn block_column_sums(k: &Mat<f64>, domain_sizes: &[usize]) -> Mat<f64> {
    let off = offsets(domain_sizes);
    Mat::from_fn(k.nrows(), domain_sizes.len(), |a, d| {
        (off[d]..off[d + 1]).map(|b| k[(a, b)]).sum()
    })
}

/// Between-domain Gram Ĝ of empirical mean embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGram {
    pub values: Vec<Vec<f64>>,
}

impl DomainGram {
    pub fn n_domains(&self) -> usize {
        self.values.len()
    }

    pub fn to_mat(&self) -> Mat<f64> {
        let n = self.values.len();
        Mat::from_fn(n, n, |i, j| self.values[i][j])
    }
}

/// Ĝᵢⱼ = block mean of the pooled Gram.
pub fn domain_gram(g: &GramMatrix) -> DomainGram {
    let off = g.offsets();
    let nd = g.domain_sizes.len();
    let mut values = vec![vec![0.0; nd]; nd];
    for i in 0..nd {
        for j in i..nd {
            let mut s = 0.0;
            for b in off[j]..off[j + 1] {
                for a in off[i]..off[i + 1] {
                    s += g.values[(a, b)];
                }
            }
            let v = s / (g.domain_sizes[i] * g.domain_sizes[j]) as f64;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    DomainGram { values }
}

/// `tr(KQ)` using the dense Q.
pub fn distributional_variance(g: &GramMatrix, q: &CoefficientMatrix) -> Result<f64> {
    if g.domain_sizes != q.domain_sizes || g.n() != q.values.nrows() {
        return Err(Error::Input(
            "gram and coefficient matrix describe different domain layouts".into(),
        ));
    }
    Ok(crate::matrix::trace_of_product(&g.values, &q.values))
}

/// `(1/N)tr(Ĝ) − (1/N²)ΣᵢⱼĜᵢⱼ`.
pub fn distributional_variance_gramform(dg: &DomainGram) -> f64 {
    let n = dg.n_domains() as f64;
    let tr: f64 = (0..dg.n_domains()).map(|i| dg.values[i][i]).sum();
    let total: f64 = dg.values.iter().flatten().sum();
    tr / n - total / (n * n)
}

/// `Ĝᵢᵢ + Ĝⱼⱼ − 2Ĝᵢⱼ`.
pub fn mmd_squared(dg: &DomainGram, i: usize, j: usize) -> Result<f64> {
    let n = dg.n_domains();
    if i >= n || j >= n {
        return Err(Error::Input(format!(
            "domain index ({i}, {j}) out of range for {n} domains"
        )));
    }
    if i == j {
        return Ok(0.0);
    }
    Ok(dg.values[i][i] + dg.values[j][j] - 2.0 * dg.values[i][j])
}

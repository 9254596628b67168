//! Seeded synthetic multi-domain generators.
//!
//! Every generator draws from a ChaCha20 stream seeded with the config's
//! `seed` via `seed_from_u64`, in a fixed order, so output is a pure function
//! of the config.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domains::{DomainBlock, DomainDataset};
use crate::error::{Error, Result};
use crate::io::Telemonitoring;

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `df × dim` factor `V` with rows `vᵢ ∼ N(0, scale·I)`; `VᵀV` is Wishart.
fn wishart_factor<R: Rng + ?Sized>(scale: f64, df: usize, dim: usize, rng: &mut R) -> Result<Mat<f64>> {
    if df < dim {
        return Err(Error::Config(format!(
            "wishart degrees of freedom {df} below dimension {dim}"
        )));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("wishart scale must be >= 0, got {scale}")));
    }
    let sd = scale.sqrt();
    let mut v = Mat::<f64>::zeros(df, dim);
    for i in 0..df {
        for j in 0..dim {
            v[(i, j)] = sd * normal(rng);
        }
    }
    Ok(v)
}

/// `W = Σᵢ vᵢvᵢᵀ` over `df` draws `vᵢ ∼ N(0, scale·I_dim)`.
pub fn sample_wishart<R: Rng + ?Sized>(scale: f64, df: usize, dim: usize, rng: &mut R) -> Result<Mat<f64>> {
    let v = wishart_factor(scale, df, dim, rng)?;
    let mut w = v.transpose() * &v;
    crate::matrix::symmetrize(&mut w);
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthToyConfig {
    pub n_domains: usize,
    pub poisson_mean: f64,
    pub dim: usize,
    pub wishart_scale: f64,
    pub wishart_df: usize,
    /// Drawn from the seed when absent.
    pub b1: Option<Vec<f64>>,
    pub b2: Option<Vec<f64>>,
    pub c: Option<f64>,
    pub seed: u64,
    /// Replaces the Poisson draw for every domain.
    pub fixed_n: Option<usize>,
}

impl Default for SynthToyConfig {
    fn default() -> Self {
        SynthToyConfig {
            n_domains: 10,
            poisson_mean: 200.0,
            dim: 5,
            wishart_scale: 0.2,
            wishart_df: 10,
            b1: None,
            b2: None,
            c: None,
            seed: 0,
            fixed_n: None,
        }
    }
}

impl SynthToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains == 0 || self.dim == 0 {
            return Err(Error::Config("n_domains and dim must be positive".into()));
        }
        if self.wishart_df < self.dim {
            return Err(Error::Config("wishart_df must be at least dim".into()));
        }
        if !(self.poisson_mean > 0.0 && self.poisson_mean.is_finite()) {
            return Err(Error::Config("poisson_mean must be positive".into()));
        }
        for b in [&self.b1, &self.b2].into_iter().flatten() {
            if b.len() != self.dim {
                return Err(Error::Config("b1/b2 must have length dim".into()));
            }
        }
        Ok(())
    }
}

/// A generated toy dataset with the per-domain covariances that produced it.
#[derive(Debug, Clone)]
pub struct ToyDraw {
    pub data: DomainDataset,
    pub covariances: Vec<Mat<f64>>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub c: f64,
}

/// Zero-mean Gaussian domains with Wishart covariances and the shared output
/// `y = sign(b₁ᵀx + ε₁)·log|b₂ᵀx + c + ε₂|`.
pub fn make_toy_draw(config: &SynthToyConfig) -> Result<ToyDraw> {
    config.validate()?;
    let d = config.dim;
    let mut rng = rng_from_seed(config.seed);
    let drawn_b1: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let drawn_b2: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let drawn_c = normal(&mut rng);
    let b1 = config.b1.clone().unwrap_or(drawn_b1);
    let b2 = config.b2.clone().unwrap_or(drawn_b2);
    let c = config.c.unwrap_or(drawn_c);
    let poisson = Poisson::new(config.poisson_mean)
        .map_err(|e| Error::Config(format!("poisson mean: {e}")))?;

    let mut blocks = Vec::with_capacity(config.n_domains);
    let mut covariances = Vec::with_capacity(config.n_domains);
    for k in 0..config.n_domains {
        let drawn = poisson.sample(&mut rng) as usize;
        let n = config.fixed_n.unwrap_or(drawn).max(2);
        let v = wishart_factor(config.wishart_scale, config.wishart_df, d, &mut rng)?;
        let mut x = Mat::<f64>::zeros(n, d);
        let mut y = Vec::with_capacity(n);
        let mut z = vec![0.0; config.wishart_df];
        for i in 0..n {
            // x = Vᵀz has covariance VᵀV.
            for zi in z.iter_mut() {
                *zi = normal(&mut rng);
            }
            for j in 0..d {
                x[(i, j)] = (0..config.wishart_df).map(|r| v[(r, j)] * z[r]).sum();
            }
            let row: Vec<f64> = (0..d).map(|j| x[(i, j)]).collect();
            let dot = |b: &[f64]| b.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>();
            let e1 = normal(&mut rng);
            let mut arg = dot(&b2) + c + normal(&mut rng);
            while arg.abs() < 1e-12 {
                arg = dot(&b2) + c + normal(&mut rng);
            }
            let s = if dot(&b1) + e1 < 0.0 { -1.0 } else { 1.0 };
            y.push(s * arg.abs().ln());
        }
        let mut cov = v.transpose() * &v;
        crate::matrix::symmetrize(&mut cov);
        covariances.push(cov);
        blocks.push(DomainBlock::new(k as i64, x, Some(y))?);
    }
    Ok(ToyDraw {
        data: DomainDataset::new(blocks)?,
        covariances,
        b1,
        b2,
        c,
    })
}

pub fn make_toy(config: &SynthToyConfig) -> Result<DomainDataset> {
    Ok(make_toy_draw(config)?.data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClassConfig {
    pub n_domains: usize,
    pub n_test_domains: usize,
    pub per_domain_n: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub domain_shift_scale: f64,
    pub seed: u64,
}

impl Default for SynthClassConfig {
    fn default() -> Self {
        SynthClassConfig {
            n_domains: 10,
            n_test_domains: 5,
            per_domain_n: 200,
            dim: 5,
            class_separation: 2.0,
            domain_shift_scale: 1.0,
            seed: 0,
        }
    }
}

/// Two-class domains sharing a fixed class direction `w`.
///
/// Domain `i` maps standard normal noise through `Aᵢ = P(I + s·Rᵢ/√d)P + wwᵀ`
/// (`P` projects onto `w⊥`, `Rᵢ` standard normal), adds an offset
/// `tᵢ ∼ N(0, s²I)` and moves each class by `±(sep/2)·w`. Labels are 0/1 with
/// equal prior. With `s = 0` every domain has the same distribution.
pub fn make_classification(config: &SynthClassConfig) -> Result<(DomainDataset, DomainDataset)> {
    if config.n_domains == 0 || config.n_test_domains == 0 || config.per_domain_n == 0 || config.dim == 0 {
        return Err(Error::Config("classification sizes must be positive".into()));
    }
    if !(config.class_separation > 0.0) {
        return Err(Error::Config("class_separation must be positive".into()));
    }
    if !(config.domain_shift_scale >= 0.0) {
        return Err(Error::Config("domain_shift_scale must be nonnegative".into()));
    }
    let d = config.dim;
    let s = config.domain_shift_scale;
    let mut rng = rng_from_seed(config.seed);
    let mut w: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    w.iter_mut().for_each(|a| *a /= norm);
    let p = Mat::from_fn(d, d, |i, j| f64::from(u8::from(i == j)) - w[i] * w[j]);
    let ww = Mat::from_fn(d, d, |i, j| w[i] * w[j]);

    let total = config.n_domains + config.n_test_domains;
    let mut blocks = Vec::with_capacity(total);
    for k in 0..total {
        let r = Mat::from_fn(d, d, |_, _| normal(&mut rng));
        let inner = Mat::from_fn(d, d, |i, j| {
            f64::from(u8::from(i == j)) + s * r[(i, j)] / (d as f64).sqrt()
        });
        let a = &(&(&p * &inner) * &p) + &ww;
        let offset: Vec<f64> = (0..d).map(|_| s * normal(&mut rng)).collect();
        let n = config.per_domain_n;
        let mut x = Mat::<f64>::zeros(n, d);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let z: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let sign = 2.0 * label - 1.0;
            for j in 0..d {
                let az: f64 = (0..d).map(|q| a[(j, q)] * z[q]).sum();
                x[(i, j)] = az + offset[j] + sign * 0.5 * config.class_separation * w[j];
            }
            y.push(label);
        }
        blocks.push(DomainBlock::new(k as i64, x, Some(y))?);
    }
    let test = blocks.split_off(config.n_domains);
    Ok((DomainDataset::new(blocks)?, DomainDataset::new(test)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRegressionConfig {
    pub n_domains: usize,
    pub per_domain_n: usize,
    pub dim: usize,
    pub domain_shift_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthRegressionConfig {
    fn default() -> Self {
        SynthRegressionConfig {
            n_domains: 42,
            per_domain_n: 40,
            dim: crate::io::TELEMONITORING_FEATURES,
            domain_shift_scale: 0.5,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Surrogate for the per-subject voice recordings: each subject has its own
/// feature offset and scaling, targets share one nonlinear function of the
/// features plus a subject-level offset.
pub fn make_regression(config: &SynthRegressionConfig) -> Result<Telemonitoring> {
    if config.n_domains == 0 || config.per_domain_n == 0 || config.dim == 0 {
        return Err(Error::Config("regression sizes must be positive".into()));
    }
    let d = config.dim;
    let s = config.domain_shift_scale;
    let mut rng = rng_from_seed(config.seed);
    let u: Vec<f64> = (0..d).map(|_| normal(&mut rng) / (d as f64).sqrt()).collect();
    let v: Vec<f64> = (0..d).map(|_| normal(&mut rng) / (d as f64).sqrt()).collect();
    let mut motor = Vec::with_capacity(config.n_domains);
    let mut total = Vec::with_capacity(config.n_domains);
    for k in 0..config.n_domains {
        let offset: Vec<f64> = (0..d).map(|_| s * normal(&mut rng)).collect();
        let scale: Vec<f64> = (0..d).map(|_| (0.3 * s * normal(&mut rng)).exp()).collect();
        let subject_effect = s * normal(&mut rng);
        let n = config.per_domain_n;
        let mut x = Mat::<f64>::zeros(n, d);
        let mut ym = Vec::with_capacity(n);
        let mut yt = Vec::with_capacity(n);
        for i in 0..n {
            let z: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            for j in 0..d {
                x[(i, j)] = scale[j] * z[j] + offset[j];
            }
            let a: f64 = u.iter().zip(&z).map(|(p, q)| p * q).sum();
            let b: f64 = v.iter().zip(&z).map(|(p, q)| p * q).sum();
            let m = 20.0 + 6.0 * a.tanh() + 2.0 * b + subject_effect;
            ym.push(m + config.noise * normal(&mut rng));
            yt.push(1.3 * m + 3.0 * (a * b).sin() + config.noise * normal(&mut rng));
        }
        motor.push(DomainBlock::new(k as i64, x.clone(), Some(ym))?);
        total.push(DomainBlock::new(k as i64, x, Some(yt))?);
    }
    Ok(Telemonitoring {
        motor: DomainDataset::new(motor)?,
        total: DomainDataset::new(total)?,
    })
}

//! Dense factorizations and deterministic top-m eigensolvers.
//!
//! Every eigenvector returned from here carries the same sign convention: the
//! entry of largest magnitude (first one on ties) is positive. That makes
//! results independent of the eigensolver's internal choices.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::diag::Diag;
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};
use crate::matrix::{frobenius, max_asymmetry, symmetrize};

pub const DEFAULT_IMAG_TOL: f64 = 1e-6;

/// Leading eigenpairs, descending by (real part of) eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub vectors: Mat<f64>,
    pub values: Vec<f64>,
    /// Largest absolute imaginary part that was dropped.
    pub max_imag: f64,
    /// Largest eigenvalue modulus of the full spectrum.
    pub spectral_radius: f64,
}

fn check_square(a: &Mat<f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::Input(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

fn check_symmetric(a: &Mat<f64>, what: &str) -> Result<()> {
    let scale = frobenius(a).max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(a);
    if asym > 1e-10 * scale {
        return Err(Error::Input(format!(
            "{what} is not symmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }
    Ok(())
}

/// Lower-triangular `R` with `RRᵀ = a`.
pub fn cholesky_pd(a: &Mat<f64>) -> Result<Mat<f64>> {
    check_square(a, "cholesky input")?;
    check_symmetric(a, "cholesky input")?;
    if a.nrows() == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    match a.llt(Side::Lower) {
        Ok(f) => Ok(f.L().to_owned()),
        Err(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index }) => {
            Err(Error::Definiteness { pivot: index })
        }
    }
}

/// `R⁻¹ b` for lower-triangular `r`.
pub(crate) fn solve_lower(r: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut x = b.clone();
    solve_lower_triangular_in_place(r.as_ref(), x.as_mut(), Par::Seq);
    x
}

/// `R⁻ᵀ b` for lower-triangular `r`.
pub(crate) fn solve_lower_transpose(r: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut x = b.clone();
    solve_upper_triangular_in_place(r.transpose(), x.as_mut(), Par::Seq);
    x
}

pub(crate) fn solve_with_factor(r: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    solve_lower_transpose(r, &solve_lower(r, b))
}

/// `a⁻¹ b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Mat<f64>, b: &Mat<f64>) -> Result<Mat<f64>> {
    let n = check_square(a, "system matrix")?;
    if b.nrows() != n {
        return Err(Error::Input(format!(
            "right-hand side has {} rows, system has {n}",
            b.nrows()
        )));
    }
    let r = cholesky_pd(a)?;
    Ok(solve_with_factor(&r, b))
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn fix_signs(v: &mut Mat<f64>) {
    for j in 0..v.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..v.nrows() {
            let a = v[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if v.nrows() > 0 && v[(best, j)] < 0.0 {
            for i in 0..v.nrows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
}

fn check_count(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::Input(format!(
            "requested {m} eigenpairs from a {n}x{n} matrix"
        )));
    }
    Ok(())
}

/// The `m` eigenpairs of largest real part of a general real matrix.
///
/// Imaginary parts up to `imag_tol · spectral radius` are discarded; for a
/// near-real conjugate pair the real and imaginary parts of the complex
/// eigenvector become two real columns spanning the invariant subspace.
pub fn top_eig_nonsymmetric(mat: &Mat<f64>, m: usize, imag_tol: f64) -> Result<EigenResult> {
    let n = check_square(mat, "eigenproblem matrix")?;
    check_count(n, m)?;
    let mut s_re = Diag::<f64>::zeros(n);
    let mut s_im = Diag::<f64>::zeros(n);
    let mut u = Mat::<f64>::zeros(n, n);
    let par = Par::Seq;
    let mut buf = MemBuffer::new(evd::evd_scratch::<f64>(
        n,
        ComputeEigenvectors::No,
        ComputeEigenvectors::Yes,
        par,
        Default::default(),
    ));
    evd::evd_real(
        mat.as_ref(),
        s_re.as_mut(),
        s_im.as_mut(),
        None,
        Some(u.as_mut()),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|_| Error::NoConvergence)?;

    let re: Vec<f64> = (0..n).map(|i| s_re[i]).collect();
    let im: Vec<f64> = (0..n).map(|i| s_im[i]).collect();
    let radius = re
        .iter()
        .zip(&im)
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0f64, f64::max);
    let max_imag = im.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    if max_imag > imag_tol * radius {
        return Err(Error::Spectrum {
            max_imag,
            tolerance: imag_tol * radius,
        });
    }

    // Complex pairs occupy (j, j+1) with the real part in column j and the
    // imaginary part in column j+1; both share the same real eigenvalue here.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| re[b].total_cmp(&re[a]));
    let keep = &order[..m];
    let mut vectors = Mat::from_fn(n, m, |i, k| u[(i, keep[k])]);
    for k in 0..m {
        let norm: f64 = (0..n).map(|i| vectors[(i, k)].powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..n {
                vectors[(i, k)] /= norm;
            }
        }
    }
    fix_signs(&mut vectors);
    Ok(EigenResult {
        vectors,
        values: keep.iter().map(|&k| re[k]).collect(),
        max_imag,
        spectral_radius: radius,
    })
}

/// Scales each column so `vᵀcv = 1`, then re-applies the sign convention.
pub fn normalize_constraint(vectors: &Mat<f64>, c: &Mat<f64>) -> Result<Mat<f64>> {
    let n = check_square(c, "constraint matrix")?;
    if vectors.nrows() != n {
        return Err(Error::Input(format!(
            "vectors have {} rows, constraint is {n}x{n}",
            vectors.nrows()
        )));
    }
    let cv = c * vectors;
    let mut out = vectors.clone();
    for j in 0..vectors.ncols() {
        let q: f64 = (0..n).map(|i| vectors[(i, j)] * cv[(i, j)]).sum();
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Degenerate { column: j, value: q });
        }
        let s = 1.0 / q.sqrt();
        for i in 0..n {
            out[(i, j)] *= s;
        }
    }
    fix_signs(&mut out);
    Ok(out)
}

/// Top-m eigenpairs of a symmetric matrix with orthonormal eigenvectors.
pub fn top_eig_symmetric(a: &Mat<f64>, m: usize) -> Result<EigenResult> {
    let n = check_square(a, "eigenproblem matrix")?;
    check_count(n, m)?;
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::NoConvergence)?;
    let s = evd.S();
    let u = evd.U();
    // Ascending order from the solver; walk it backwards.
    let mut vectors = Mat::from_fn(n, m, |i, k| u[(i, n - 1 - k)]);
    fix_signs(&mut vectors);
    let radius = s[0].abs().max(s[n - 1].abs());
    Ok(EigenResult {
        vectors,
        values: (0..m).map(|k| s[n - 1 - k]).collect(),
        max_imag: 0.0,
        spectral_radius: radius,
    })
}

/// Solves `A B = C B Γ` for symmetric `A` and symmetric PD `C` through
/// `C = RRᵀ` and the symmetric matrix `R⁻¹AR⁻ᵀ`. Columns satisfy `BᵀCB = I`.
pub fn generalized_symmetric(a: &Mat<f64>, c: &Mat<f64>, m: usize) -> Result<EigenResult> {
    let n = check_square(a, "left matrix")?;
    if check_square(c, "right matrix")? != n {
        return Err(Error::Input("generalized eigenproblem size mismatch".into()));
    }
    check_count(n, m)?;
    let r = cholesky_pd(c)?;
    let x = solve_lower(&r, a);
    let mut w = solve_lower(&r, &x.transpose().to_owned());
    symmetrize(&mut w);
    let inner = top_eig_symmetric(&w, m)?;
    let mut b = solve_lower_transpose(&r, &inner.vectors);
    fix_signs(&mut b);
    Ok(EigenResult {
        vectors: b,
        values: inner.values,
        max_imag: 0.0,
        spectral_radius: inner.spectral_radius,
    })
}

/// Solves `A B = C B Γ` through the nonsymmetric `M = C⁻¹A`, then applies the
/// constraint normalization `diag(BᵀCB) = 1`.
pub fn generalized_general(
    a: &Mat<f64>,
    c: &Mat<f64>,
    m: usize,
    imag_tol: f64,
) -> Result<EigenResult> {
    let n = check_square(a, "left matrix")?;
    if check_square(c, "right matrix")? != n {
        return Err(Error::Input("generalized eigenproblem size mismatch".into()));
    }
    let mat = solve_spd(c, a)?;
    let res = top_eig_nonsymmetric(&mat, m, imag_tol)?;
    let vectors = normalize_constraint(&res.vectors, c)?;
    Ok(EigenResult { vectors, ..res })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{from_rows, max_abs_diff};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random(n: usize, k: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Mat::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_pd(n: usize, seed: u64) -> Mat<f64> {
        let m = random(n, n, seed);
        crate::matrix::add_diagonal(&(m.transpose() * &m), 1.0)
    }

    fn to_na(m: &Mat<f64>) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    #[test]
    fn cholesky_examples() {
        let i3 = Mat::<f64>::identity(3, 3);
        assert_eq!(cholesky_pd(&i3).unwrap(), i3);
        let d = from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]);
        let r = cholesky_pd(&d).unwrap();
        assert_eq!(r, from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]));

        let a = random_pd(12, 1);
        let r = cholesky_pd(&a).unwrap();
        let back = &r * r.transpose();
        assert!(frobenius(&(&back - &a)) < 1e-9 * frobenius(&a));
        for j in 0..12 {
            for i in 0..j {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_reports_pivot() {
        let a = from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, -1.0],
        ]);
        match cholesky_pd(&a) {
            Err(Error::Definiteness { pivot }) => assert_eq!(pivot, 2),
            other => panic!("unexpected {other:?}"),
        }
        let asym = from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        assert!(matches!(cholesky_pd(&asym), Err(Error::Input(_))));
    }

    #[test]
    fn solve_examples() {
        let b = random(4, 2, 3);
        assert!(max_abs_diff(&solve_spd(&Mat::identity(4, 4), &b).unwrap(), &b) < 1e-15);
        let x = solve_spd(&from_rows(&[vec![2.0]]), &from_rows(&[vec![4.0]])).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-15);

        let a = random_pd(20, 4);
        let b = random(20, 3, 5);
        let x = solve_spd(&a, &b).unwrap();
        assert!(frobenius(&(&(&a * &x) - &b)) / frobenius(&b) < 1e-8);
    }

    #[test]
    fn nonsymmetric_diag() {
        let d = from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
        let r = top_eig_nonsymmetric(&d, 1, 1e-6).unwrap();
        assert!((r.values[0] - 3.0).abs() < 1e-14);
        assert!((r.vectors[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(r.vectors[(1, 0)].abs() < 1e-14);
        assert!(matches!(top_eig_nonsymmetric(&d, 3, 1e-6), Err(Error::Input(_))));
    }

    #[test]
    fn nonsymmetric_rotation_is_rejected() {
        let rot = from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]);
        assert!(matches!(
            top_eig_nonsymmetric(&rot, 1, 1e-8),
            Err(Error::Spectrum { .. })
        ));
    }

    #[test]
    fn psd_product_spectrum_matches_dense_oracle() {
        for seed in 0..5 {
            let n = 15;
            let x = random(n, 6, 10 + seed);
            let y = random(n, n, 20 + seed);
            let s = &x * x.transpose();
            let p = y.transpose() * &y;
            let mat = &s * &p;
            let r = top_eig_nonsymmetric(&mat, 6, 1e-6).unwrap();
            let mut oracle: Vec<f64> = to_na(&mat)
                .complex_eigenvalues()
                .iter()
                .map(|c| {
                    assert!(c.im.abs() < 1e-8 * c.norm().max(1.0));
                    c.re
                })
                .collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            for k in 0..6 {
                assert!(r.values[k] >= -1e-8);
                assert!((r.values[k] - oracle[k]).abs() < 1e-8 * oracle[0]);
                let v = Mat::from_fn(n, 1, |i, _| r.vectors[(i, k)]);
                let resid = frobenius(&(&(&mat * &v) - &v * faer::Scale(r.values[k])));
                assert!(resid <= 1e-6 * frobenius(&mat) * frobenius(&v));
            }
            assert!(r.max_imag <= 1e-8 * r.spectral_radius);
        }
    }

    #[test]
    fn sign_convention_and_determinism() {
        let a = random_pd(10, 7);
        let r1 = top_eig_nonsymmetric(&a, 4, 1e-6).unwrap();
        let r2 = top_eig_nonsymmetric(&a, 4, 1e-6).unwrap();
        assert_eq!(r1.vectors, r2.vectors);
        assert_eq!(r1.values, r2.values);
        for j in 0..4 {
            let (mut idx, mut best) = (0, -1.0);
            for i in 0..10 {
                if r1.vectors[(i, j)].abs() > best {
                    best = r1.vectors[(i, j)].abs();
                    idx = i;
                }
            }
            assert!(r1.vectors[(idx, j)] > 0.0);
        }
    }

    #[test]
    fn permutation_leaves_eigenvectors_unchanged() {
        let n = 9;
        let a = random_pd(n, 8);
        let perm: Vec<usize> = (0..n).rev().collect();
        let pa = Mat::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
        let r = top_eig_symmetric(&a, 3).unwrap();
        let rp = top_eig_symmetric(&pa, 3).unwrap();
        let back = Mat::from_fn(n, 3, |i, j| rp.vectors[(perm.iter().position(|&p| p == i).unwrap(), j)]);
        assert!(max_abs_diff(&back, &r.vectors) < 1e-10);
    }

    #[test]
    fn normalize_examples() {
        let e = Mat::<f64>::identity(3, 2);
        assert_eq!(normalize_constraint(&e, &Mat::identity(3, 3)).unwrap(), e);

        let v = from_rows(&[vec![2.0], vec![0.0]]);
        let out = normalize_constraint(&v, &Mat::identity(2, 2)).unwrap();
        assert_eq!(out, from_rows(&[vec![1.0], vec![0.0]]));

        let c = random_pd(8, 9);
        let v = random(8, 3, 11);
        let b = normalize_constraint(&v, &c).unwrap();
        let btcb = b.transpose() * &c * &b;
        for j in 0..3 {
            assert!((btcb[(j, j)] - 1.0).abs() < 1e-10);
        }

        let zero = Mat::<f64>::zeros(2, 1);
        assert!(matches!(
            normalize_constraint(&zero, &Mat::identity(2, 2)),
            Err(Error::Degenerate { column: 0, .. })
        ));
    }

    #[test]
    fn generalized_routes_agree() {
        let n = 14;
        let x = random(n, n, 30);
        let a = &x * x.transpose();
        let c = random_pd(n, 31);
        let sym = generalized_symmetric(&a, &c, 4).unwrap();
        let gen = generalized_general(&a, &c, 4, 1e-6).unwrap();
        for k in 0..4 {
            assert!((sym.values[k] - gen.values[k]).abs() < 1e-9 * sym.values[0]);
        }
        assert!(max_abs_diff(&sym.vectors, &gen.vectors) < 1e-7);
        let btcb = sym.vectors.transpose() * &c * &sym.vectors;
        assert!(max_abs_diff(&btcb, &Mat::identity(4, 4)) < 1e-10);
        let lhs = &a * &sym.vectors;
        let rhs = &c * &sym.vectors * Mat::from_fn(4, 4, |i, j| if i == j { sym.values[i] } else { 0.0 });
        assert!(frobenius(&(&lhs - &rhs)) < 1e-8 * frobenius(&lhs));
    }

    #[test]
    fn symmetric_matches_nalgebra() {
        let a = random_pd(11, 40);
        let r = top_eig_symmetric(&a, 3).unwrap();
        let mut ev: Vec<f64> = to_na(&a).symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        for k in 0..3 {
            assert!((r.values[k] - ev[k]).abs() < 1e-10 * ev[0]);
        }
        let vtv = r.vectors.transpose() * &r.vectors;
        assert!(max_abs_diff(&vtv, &Mat::identity(3, 3)) < 1e-12);
    }
}

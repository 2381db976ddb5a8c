//! Dense linear-algebra kernels used by the knockoff construction.
//!
//! Eigen and QR factorizations are delegated to `nalgebra`; this module adds
//! the ordering, clipping and sign conventions the construction relies on.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`SymMatrix::new`] before symmetrizing.
const SYMMETRY_TOL: f64 = 1e-9;

/// Relative size of an `R` diagonal entry below which a QR input is treated
/// as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// A dense symmetric matrix. Symmetry is exact: construction averages the
/// matrix with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Dimension("symmetric matrix must have dim >= 1".into()));
        }
        check_finite(&m)?;
        let scale = max_abs(&m).max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Input(format!("matrix is not symmetric (max asymmetry {asym:e})")));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    /// Gram matrix `XᵀX`.
    pub fn gram(x: &DMatrix<f64>) -> Self {
        let g = x.transpose() * x;
        SymMatrix((&g + g.transpose()) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

/// Thin QR factors `m = q r` with a non-negative diagonal on `r`.
#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Set when some diagonal entry of `r` is numerically zero; the matching
    /// columns of `q` then complete the basis orthogonally.
    pub rank_deficient: bool,
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input("matrix has non-finite entries".into()))
    }
}

pub fn sym_eigen(m: &SymMatrix) -> Result<SymEigen> {
    let eig = SymmetricEigen::new(m.0.clone());
    let n = m.dim();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, idx.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues(m: &SymMatrix) -> Result<DVector<f64>> {
    let mut values: Vec<f64> = m.0.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(DVector::from_vec(values))
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    let values = sym_eigenvalues(m)?;
    Ok(values[values.len() - 1])
}

/// Symmetric square root `V diag(sqrt(max(w, 0))) Vᵀ`.
///
/// Eigenvalues in `[-clip_tol, 0)` are clipped to zero; anything lower is an
/// error. `None` uses `1e-8 * max |w|`.
pub fn symmetric_root(m: &SymMatrix, clip_tol: Option<f64>) -> Result<SymMatrix> {
    let eig = sym_eigen(m)?;
    let n = m.dim();
    let scale = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let clip_tol = clip_tol.unwrap_or(1e-8 * scale);
    let lowest = eig.values[n - 1];
    if lowest < -clip_tol {
        return Err(Error::NotPsd { eigenvalue: lowest, clip_tol });
    }
    let roots = eig.values.map(|w| w.max(0.0).sqrt());
    let mut scaled = eig.vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    let root = &scaled * eig.vectors.transpose();
    Ok(SymMatrix((&root + root.transpose()) * 0.5))
}

/// Householder thin QR of an `n x k` matrix, `n >= k`.
///
/// Signs are normalized so that `diag(r) >= 0`. Householder reflections keep
/// `q` orthonormal even for rank-deficient input; such inputs are flagged and
/// logged.
pub fn thin_qr(m: &DMatrix<f64>) -> Result<QrFactors> {
    let (n, k) = m.shape();
    if n < k {
        return Err(Error::Dimension(format!("thin QR needs n >= k, got {n}x{k}")));
    }
    check_finite(m)?;
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    let diag_max = (0..k).fold(0.0_f64, |acc, j| acc.max(r[(j, j)]));
    let rank_deficient = (0..k).any(|j| r[(j, j)] <= RANK_TOL * diag_max);
    if rank_deficient {
        log::warn!("thin QR input of shape {n}x{k} is numerically rank deficient");
    }
    Ok(QrFactors { q, r, rank_deficient })
}

/// Minimum-norm least-squares solution of `a b = y`.
pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if a.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    if a.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "least squares: {} rows vs response of length {}",
            a.nrows(),
            y.len()
        )));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(y, eps)
        .map_err(|e| Error::Construction(format!("least squares failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Cyclic Jacobi eigenvalue iteration, used as an independent oracle.
    fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let n = m.nrows();
        let mut a = m.clone();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut w: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        w.sort_by(|a, b| b.total_cmp(a));
        w
    }

    fn toeplitz(p: usize, rho: f64) -> SymMatrix {
        SymMatrix::new(DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))).unwrap()
    }

    fn random_psd(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = crate::seed::rng_from(seed);
        let a = DMatrix::from_fn(dim, dim + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        SymMatrix::gram(&a.transpose())
    }

    #[test]
    fn eigen_identity_and_diagonal() {
        let eig = sym_eigen(&SymMatrix::identity(3)).unwrap();
        assert_eq!(eig.values.as_slice(), &[1.0, 1.0, 1.0]);

        let eig = sym_eigen(&SymMatrix::new(dmatrix![1.0, 0.0; 0.0, 4.0]).unwrap()).unwrap();
        assert_eq!(eig.values.as_slice(), &[4.0, 1.0]);
        assert!((eig.vectors[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((eig.vectors[(0, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_equicorrelated_pair() {
        let m = SymMatrix::new(dmatrix![1.0, 0.5; 0.5, 1.0]).unwrap();
        let eig = sym_eigen(&m).unwrap();
        assert!((eig.values[0] - 1.5).abs() < 1e-12);
        assert!((eig.values[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eigen_rejects_non_finite() {
        let err = SymMatrix::new(dmatrix![1.0, f64::NAN; f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn symmetric_root_examples() {
        let root = symmetric_root(&SymMatrix::identity(4), None).unwrap();
        assert!((root.as_matrix() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);

        let root = symmetric_root(&SymMatrix::new(dmatrix![4.0, 0.0; 0.0, 9.0]).unwrap(), None).unwrap();
        assert!((root.as_matrix() - dmatrix![2.0, 0.0; 0.0, 3.0]).amax() < 1e-12);

        let equi = SymMatrix::new(DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.5 })).unwrap();
        let root = symmetric_root(&equi, None).unwrap();
        let sq = root.as_matrix() * root.as_matrix();
        assert!((sq - equi.as_matrix()).amax() < 1e-10);
    }

    #[test]
    fn symmetric_root_rejects_indefinite() {
        let m = SymMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap();
        match symmetric_root(&m, None) {
            Err(Error::NotPsd { eigenvalue, .. }) => assert!((eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn thin_qr_examples() {
        let f = thin_qr(&dmatrix![2.0, 0.0; 0.0, 3.0]).unwrap();
        assert!((f.q - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert!((f.r - dmatrix![2.0, 0.0; 0.0, 3.0]).amax() < 1e-12);

        // orthonormal columns come back unchanged
        let s = 0.5_f64.sqrt();
        let m = dmatrix![s, 0.0; s, 0.0; 0.0, 1.0];
        let f = thin_qr(&m).unwrap();
        assert!((&f.q - &m).amax() < 1e-12);
        assert!((f.r - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);

        let mut rng = crate::seed::rng_from(3);
        let m = DMatrix::from_fn(6, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = thin_qr(&m).unwrap();
        assert!((&f.q * &f.r - &m).amax() < 1e-10);
        assert!((f.q.transpose() * &f.q - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
        for i in 0..3 {
            assert!(f.r[(i, i)] >= 0.0);
            for j in 0..i {
                assert_eq!(f.r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn thin_qr_dimension_error() {
        assert!(matches!(thin_qr(&DMatrix::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn thin_qr_rank_deficient_is_completed() {
        let m = dmatrix![1.0, 2.0, 0.0; 1.0, 2.0, 1.0; 0.0, 0.0, 1.0; 1.0, 2.0, 0.0];
        let f = thin_qr(&m).unwrap();
        assert!(f.rank_deficient);
        assert!((&f.q * &f.r - &m).amax() < 1e-10);
        assert!((f.q.transpose() * &f.q - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert!((min_eigenvalue(&SymMatrix::identity(5)).unwrap() - 1.0).abs() < 1e-12);
        let m = SymMatrix::new(dmatrix![1.0, 0.3; 0.3, 1.0]).unwrap();
        assert!((min_eigenvalue(&m).unwrap() - 0.7).abs() < 1e-12);
        let t = toeplitz(3, 0.5);
        let oracle = jacobi_eigenvalues(t.as_matrix());
        assert!((min_eigenvalue(&t).unwrap() - oracle[2]).abs() < 1e-10);
    }

    #[test]
    fn eigenvalues_agree_with_jacobi_oracle() {
        for seed in 0..5 {
            let m = random_psd(12, seed);
            let ours = sym_eigenvalues(&m).unwrap();
            let oracle = jacobi_eigenvalues(m.as_matrix());
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9 * m.max_abs());
            }
        }
    }

    #[test]
    fn least_squares_min_norm_on_duplicate_columns() {
        let a = dmatrix![1.0, 1.0; 1.0, 1.0; 0.0, 0.0];
        let y = DVector::from_vec(vec![2.0, 2.0, 0.0]);
        let b = least_squares(&a, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-10 && (b[1] - 1.0).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn factorizations_reconstruct(dim in 1usize..60, seed in any::<u64>()) {
                let m = random_psd(dim, seed);
                let scale = m.max_abs();

                let eig = sym_eigen(&m).unwrap();
                prop_assert!((eig.reconstruct() - m.as_matrix()).amax() <= 1e-8 * scale);
                for k in 1..dim {
                    prop_assert!(eig.values[k - 1] >= eig.values[k]);
                }

                let root = symmetric_root(&m, None).unwrap();
                let sq = root.as_matrix() * root.as_matrix();
                prop_assert!((sq - m.as_matrix()).amax() <= 1e-7 * scale);
                prop_assert!(min_eigenvalue(&root).unwrap() >= -1e-10 * scale.sqrt().max(1.0));

                let f = thin_qr(m.as_matrix()).unwrap();
                prop_assert!((&f.q * &f.r - m.as_matrix()).amax() <= 1e-8 * scale);
                prop_assert!((f.q.transpose() * &f.q - DMatrix::<f64>::identity(dim, dim)).amax() <= 1e-10);
            }
        }

        #[test]
        fn reconstruction_at_dim_200() {
            let m = random_psd(200, 11);
            let scale = m.max_abs();
            let eig = sym_eigen(&m).unwrap();
            assert!((eig.reconstruct() - m.as_matrix()).amax() <= 1e-8 * scale);
            let root = symmetric_root(&m, None).unwrap();
            assert!((root.as_matrix() * root.as_matrix() - m.as_matrix()).amax() <= 1e-7 * scale);
        }
    }
}

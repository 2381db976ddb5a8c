use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{min_eigenvalue, sym_eigenvalues, SymMatrix};

/// Relative shrink applied to a critical `s0` so the resulting Gram matrix
/// stays numerically PSD.
pub const S0_SAFETY: f64 = 1e-8;

const BISECTION_MAX_ITER: usize = 60;
const S0_FLOOR: f64 = 1e-12;

fn check_d(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::Parameter("number of knockoffs d must be >= 1".into()));
    }
    Ok(())
}

fn check_s0(s0: f64) -> Result<()> {
    if !(s0 > 0.0 && s0 <= 1.0) {
        return Err(Error::Parameter(format!("s0 must lie in (0, 1], got {s0}")));
    }
    Ok(())
}

fn check_batch(batch: &[usize], p: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Parameter("batch must be non-empty".into()));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= p) {
        return Err(Error::Parameter(format!("batch index {bad} out of range for p = {p}")));
    }
    Ok(())
}

/// Equi-correlated gap for the full construction: `((d+1)/d) λ_min(Σ) ∧ 1`.
pub fn critical_s0_full(sigma: &SymMatrix, d: usize) -> Result<f64> {
    check_d(d)?;
    let lmin = min_eigenvalue(sigma)?;
    let s0 = ((d + 1) as f64 / d as f64 * lmin).min(1.0);
    if s0 <= 0.0 {
        return Err(Error::Construction(format!(
            "Σ is singular (λ_min = {lmin:e}); no positive s0 exists"
        )));
    }
    Ok(s0)
}

/// The `(d+1)p`-dimensional Gram matrix with `Σ` on the diagonal blocks and
/// `Σ - s0 I` off the diagonal.
pub fn build_gram_full(sigma: &SymMatrix, d: usize, s0: f64) -> Result<SymMatrix> {
    let all: Vec<usize> = (0..sigma.dim()).collect();
    build_gram_batch(sigma, &all, d, s0)
}

/// Gram matrix of the partially augmented design `[X X̃^I]`.
///
/// Rows/columns `0..p` are the originals; then come `d` copies of the batch,
/// copy-major, each in batch order. Entry `(a, b)` is `σ(f_a, f_b)` minus `s0`
/// when both refer to the same feature through different copies.
pub fn build_gram_batch(sigma: &SymMatrix, batch: &[usize], d: usize, s0: f64) -> Result<SymMatrix> {
    check_d(d)?;
    check_s0(s0)?;
    let p = sigma.dim();
    check_batch(batch, p)?;
    let k = batch.len();
    let dim = p + d * k;
    // (feature, copy) for every row of G^I; copy 0 is the original
    let slot = |a: usize| -> (usize, usize) {
        if a < p {
            (a, 0)
        } else {
            (batch[(a - p) % k], 1 + (a - p) / k)
        }
    };
    let g = DMatrix::from_fn(dim, dim, |a, b| {
        let (fa, ca) = slot(a);
        let (fb, cb) = slot(b);
        let base = sigma.get(fa, fb);
        if fa == fb && ca != cb {
            base - s0
        } else {
            base
        }
    });
    SymMatrix::new(g)
}

/// Finds the largest PSD-preserving `s0` for batches of one `Σ`.
///
/// When `Σ` is positive definite the PSD test for `G^I(s)` goes through the
/// Schur complement of the original block, which reduces to
/// `s · d · λ_max((Σ⁻¹)_II) <= d + 1`; otherwise the dense minimum eigenvalue
/// of `G^I(s)` is used.
#[derive(Debug, Clone)]
pub struct S0Solver {
    sigma: SymMatrix,
    inverse: Option<DMatrix<f64>>,
}

impl S0Solver {
    pub fn new(sigma: &SymMatrix) -> Self {
        let inverse = sigma
            .as_matrix()
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .filter(|inv| inv.iter().all(|v| v.is_finite()));
        S0Solver { sigma: sigma.clone(), inverse }
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    /// Bisection for the largest `s0 ∈ (0, 1]` keeping `G^I(s0)` PSD, to
    /// width `tol`, then shrunk by [`S0_SAFETY`]. Returns exactly 1 when
    /// `G^I(1)` is PSD.
    pub fn critical_s0_batch(&self, batch: &[usize], d: usize, tol: f64) -> Result<f64> {
        check_d(d)?;
        check_batch(batch, self.sigma.dim())?;
        let psd: Box<dyn Fn(f64) -> Result<bool>> = match &self.inverse {
            Some(inv) => {
                let k = batch.len();
                let sub = DMatrix::from_fn(k, k, |a, b| inv[(batch[a], batch[b])]);
                let mu = sym_eigenvalues(&SymMatrix::new(sub)?)?[0];
                let (df, d1) = (d as f64, (d + 1) as f64);
                Box::new(move |s: f64| Ok(s * df * mu <= d1))
            }
            None => Box::new(move |s: f64| {
                Ok(min_eigenvalue(&build_gram_batch(&self.sigma, batch, d, s)?)? >= 0.0)
            }),
        };
        if !psd(S0_FLOOR)? {
            return Err(Error::Construction(format!(
                "G^I is not PSD even at s0 = {S0_FLOOR:e}; Σ is degenerate"
            )));
        }
        if psd(1.0)? {
            return Ok(1.0);
        }
        let (mut lo, mut hi) = (S0_FLOOR, 1.0);
        for _ in 0..BISECTION_MAX_ITER {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if psd(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo * (1.0 - S0_SAFETY))
    }
}

/// One-shot form of [`S0Solver::critical_s0_batch`].
pub fn critical_s0_batch(sigma: &SymMatrix, batch: &[usize], d: usize, tol: f64) -> Result<f64> {
    S0Solver::new(sigma).critical_s0_batch(batch, d, tol)
}

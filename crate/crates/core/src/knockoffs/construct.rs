use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::design::{extend_design, required_rows, DesignData};
use super::gram::{build_gram_batch, critical_s0_full, S0Solver, S0_SAFETY};
use super::partition::BatchPartition;
use crate::error::{Error, Result};
use crate::numerics::{symmetric_root, thin_qr, SymMatrix};

/// Largest accepted deviation between the rotated originals and `X`.
const ALIGN_TOL: f64 = 1e-6;

const BISECTION_TOL: f64 = 1e-10;

/// `d` knockoff copies for every feature plus the batch metadata needed to
/// rebuild the per-batch augmented designs.
///
/// Knockoffs are stored as an `n x dp` matrix; copy `j` (1-based) of feature
/// `i` is column `(j-1)p + i`.
#[derive(Debug, Clone)]
pub struct KnockoffSet {
    d: usize,
    knockoffs: DMatrix<f64>,
    partition: BatchPartition,
    per_batch_s0: Vec<f64>,
    extended_rows: usize,
    sigma_hat: Option<f64>,
    original_discrepancy: f64,
    fingerprint: String,
}

impl KnockoffSet {
    /// Reassemble a set from stored parts (e.g. files written by the CLI).
    pub fn from_parts(
        d: usize,
        knockoffs: DMatrix<f64>,
        partition: BatchPartition,
        per_batch_s0: Vec<f64>,
        extended_rows: usize,
        sigma_hat: Option<f64>,
    ) -> Result<Self> {
        let p = partition.p();
        if d == 0 {
            return Err(Error::Parameter("d must be >= 1".into()));
        }
        if knockoffs.ncols() != d * p {
            return Err(Error::Dimension(format!(
                "expected {} knockoff columns for d = {d}, p = {p}, got {}",
                d * p,
                knockoffs.ncols()
            )));
        }
        if per_batch_s0.len() != partition.len() {
            return Err(Error::Dimension("one s0 per batch required".into()));
        }
        if let Some(bad) = per_batch_s0.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::Parameter(format!("s0 must lie in (0, 1], got {bad}")));
        }
        let fingerprint = fingerprint(&knockoffs);
        Ok(KnockoffSet {
            d,
            knockoffs,
            partition,
            per_batch_s0,
            extended_rows,
            sigma_hat,
            original_discrepancy: 0.0,
            fingerprint,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.partition.p()
    }

    pub fn n(&self) -> usize {
        self.knockoffs.nrows()
    }

    pub fn knockoffs(&self) -> &DMatrix<f64> {
        &self.knockoffs
    }

    /// Copy `copy` (1-based) of `feature`.
    pub fn knockoff(&self, feature: usize, copy: usize) -> DVector<f64> {
        self.knockoffs.column((copy - 1) * self.p() + feature).into_owned()
    }

    pub fn partition(&self) -> &BatchPartition {
        &self.partition
    }

    pub fn per_batch_s0(&self) -> &[f64] {
        &self.per_batch_s0
    }

    pub fn extended_rows(&self) -> usize {
        self.extended_rows
    }

    pub fn sigma_hat(&self) -> Option<f64> {
        self.sigma_hat
    }

    /// Max deviation of the rotated original block from `X`, measured during
    /// construction.
    pub fn original_discrepancy(&self) -> f64 {
        self.original_discrepancy
    }

    /// SHA-256 of the knockoff matrix, hex encoded.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// `[X X̃^I]` for batch `b`: the `p` originals followed by `d` copies of the
    /// batch, copy-major.
    pub fn batch_design(&self, x: &DMatrix<f64>, b: usize) -> DMatrix<f64> {
        let batch = &self.partition.batches()[b];
        let p = self.p();
        let k = batch.len();
        let mut out = DMatrix::zeros(x.nrows(), p + self.d * k);
        out.columns_mut(0, p).copy_from(x);
        for copy in 1..=self.d {
            for (slot, &f) in batch.iter().enumerate() {
                out.column_mut(p + (copy - 1) * k + slot)
                    .copy_from(&self.knockoffs.column((copy - 1) * p + f));
            }
        }
        out
    }
}

fn fingerprint(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Build `d` knockoffs per feature, one batch at a time.
///
/// `data` must already have at least `(d+1)p` rows (see [`prepare_knockoffs`]).
/// The shared basis `Q_b` comes from the thin QR of `[X A]` with `A` standard
/// Gaussian; batch `j` uses the first `p` columns of `Q_b` plus its own
/// contiguous slice of the trailing `dp` columns.
pub fn construct_knockoffs<R: Rng + ?Sized>(
    data: &DesignData,
    d: usize,
    partition: &BatchPartition,
    rng: &mut R,
) -> Result<KnockoffSet> {
    if d == 0 {
        return Err(Error::Parameter("d must be >= 1".into()));
    }
    let (n, p) = (data.n(), data.p());
    if partition.p() != p {
        return Err(Error::Dimension(format!("partition covers {} features, design has {p}", partition.p())));
    }
    let required = required_rows(p, d);
    if n < required {
        return Err(Error::Dimension(format!(
            "need n >= (d+1)p = {required} rows (extend the design first), got {n}"
        )));
    }

    let mut basis = DMatrix::zeros(n, required);
    basis.columns_mut(0, p).copy_from(data.x());
    for v in basis.columns_mut(p, d * p).iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let qb = thin_qr(&basis)?.q;

    let sigma = data.gram();
    let solver = S0Solver::new(&sigma);
    let offsets: Vec<usize> = partition
        .batches()
        .iter()
        .scan(0, |acc, b| {
            let off = *acc;
            *acc += d * b.len();
            Some(off)
        })
        .collect();

    let pieces: Vec<(f64, DMatrix<f64>, f64)> = partition
        .batches()
        .par_iter()
        .zip(offsets.par_iter())
        .map(|(batch, &offset)| build_batch(data.x(), &sigma, &solver, &qb, batch, offset, d))
        .collect::<Result<_>>()?;

    let mut knockoffs = DMatrix::zeros(n, d * p);
    let mut per_batch_s0 = Vec::with_capacity(partition.len());
    let mut discrepancy: f64 = 0.0;
    for ((s0, x1, disc), batch) in pieces.into_iter().zip(partition.batches()) {
        let k = batch.len();
        for copy in 1..=d {
            for (slot, &f) in batch.iter().enumerate() {
                knockoffs
                    .column_mut((copy - 1) * p + f)
                    .copy_from(&x1.column(p + (copy - 1) * k + slot));
            }
        }
        per_batch_s0.push(s0);
        discrepancy = discrepancy.max(disc);
    }

    let mut set = KnockoffSet::from_parts(
        d,
        knockoffs,
        partition.clone(),
        per_batch_s0,
        data.extended_rows(),
        data.sigma_hat(),
    )?;
    set.original_discrepancy = discrepancy;
    Ok(set)
}

fn build_batch(
    x: &DMatrix<f64>,
    sigma: &SymMatrix,
    solver: &S0Solver,
    qb: &DMatrix<f64>,
    batch: &[usize],
    offset: usize,
    d: usize,
) -> Result<(f64, DMatrix<f64>, f64)> {
    let p = x.ncols();
    let s0 = if batch.len() == p {
        let s = critical_s0_full(sigma, d)?;
        if s < 1.0 {
            s * (1.0 - S0_SAFETY)
        } else {
            s
        }
    } else {
        solver.critical_s0_batch(batch, d, BISECTION_TOL)?
    };
    let g = build_gram_batch(sigma, batch, d, s0)?;
    let root = symmetric_root(&g, None)?;
    let r0 = thin_qr(root.as_matrix())?.r;

    let width = d * batch.len();
    let mut q = DMatrix::zeros(qb.nrows(), p + width);
    q.columns_mut(0, p).copy_from(&qb.columns(0, p));
    q.columns_mut(p, width).copy_from(&qb.columns(p + offset, width));
    let x1 = q * r0;

    let disc = (x1.columns(0, p) - x).amax();
    if !(disc <= ALIGN_TOL) {
        return Err(Error::Construction(format!(
            "rotated originals deviate from X by {disc:e} (> {ALIGN_TOL:e})"
        )));
    }
    Ok((s0, x1, disc))
}

/// Extend the design when `n < (d+1)p`, then construct knockoffs.
///
/// Returns the (possibly extended) design the knockoffs live alongside.
pub fn prepare_knockoffs<R: Rng + ?Sized>(
    data: &DesignData,
    d: usize,
    partition: &BatchPartition,
    sigma_known: Option<f64>,
    rng: &mut R,
) -> Result<(DesignData, KnockoffSet)> {
    let data = if data.n() < required_rows(data.p(), d) {
        extend_design(data, d, sigma_known, rng)?
    } else {
        data.clone()
    };
    let set = construct_knockoffs(&data, d, partition, rng)?;
    Ok((data, set))
}

/// Per-batch Gram deviations of a knockoff set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramReport {
    pub per_batch: Vec<f64>,
    pub tol: f64,
    pub pass: bool,
}

impl GramReport {
    pub fn max_deviation(&self) -> f64 {
        self.per_batch.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Compare the empirical Gram of each `[X X̃^I]` with `G^I(s0_I)`.
pub fn verify_gram(data: &DesignData, ks: &KnockoffSet, tol: f64) -> GramReport {
    let sigma = data.gram();
    let per_batch: Vec<f64> = ks
        .partition()
        .batches()
        .iter()
        .enumerate()
        .map(|(b, batch)| {
            let aug = ks.batch_design(data.x(), b);
            let empirical = aug.transpose() * &aug;
            match build_gram_batch(&sigma, batch, ks.d(), ks.per_batch_s0()[b]) {
                Ok(target) if empirical.shape() == target.as_matrix().shape() => {
                    (empirical - target.as_matrix()).amax()
                }
                _ => f64::INFINITY,
            }
        })
        .collect();
    let pass = per_batch.iter().all(|&dev| dev <= tol);
    GramReport { per_batch, tol, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knockoffs::{cluster_batches, PartitionMethod};
    use crate::seed::rng_from;

    fn random_design(n: usize, p: usize, seed: u64) -> DesignData {
        let mut rng = rng_from(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        DesignData::new(x, y).unwrap()
    }

    #[test]
    fn single_batch_d1_matches_two_block_gram() {
        let data = random_design(40, 8, 1);
        let ks = construct_knockoffs(&data, 1, &BatchPartition::single(8), &mut rng_from(2)).unwrap();
        let report = verify_gram(&data, &ks, 1e-6);
        assert!(report.pass, "{report:?}");
        let s0 = ks.per_batch_s0()[0];
        let expected = crate::knockoffs::build_gram_full(&data.gram(), 1, s0).unwrap();
        let aug = ks.batch_design(data.x(), 0);
        assert!((aug.transpose() * &aug - expected.as_matrix()).amax() < 1e-6);
        assert!(ks.original_discrepancy() < 1e-6);
    }

    #[test]
    fn orthonormal_design_gives_orthogonal_knockoffs() {
        let mut x = DMatrix::zeros(12, 3);
        for j in 0..3 {
            x[(j, j)] = 1.0;
        }
        let data = DesignData::new(x, DVector::zeros(12)).unwrap();
        for d in 1..=3 {
            let ks = construct_knockoffs(&data, d, &BatchPartition::single(3), &mut rng_from(d as u64)).unwrap();
            assert_eq!(ks.per_batch_s0(), &[1.0]);
            let aug = ks.batch_design(data.x(), 0);
            let g = aug.transpose() * &aug;
            assert!((g - DMatrix::<f64>::identity(3 * (d + 1), 3 * (d + 1))).amax() < 1e-6);
        }
    }

    #[test]
    fn clustered_batches_pass_verification() {
        let data = random_design(30, 6, 3);
        let part = cluster_batches(data.x(), 2).unwrap();
        let ks = construct_knockoffs(&data, 2, &part, &mut rng_from(4)).unwrap();
        let report = verify_gram(&data, &ks, 1e-6);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.per_batch.len(), 2);
    }

    #[test]
    fn copies_of_originals_fail_verification() {
        let data = random_design(30, 5, 5);
        let ks = construct_knockoffs(&data, 1, &BatchPartition::single(5), &mut rng_from(6)).unwrap();
        assert!(ks.per_batch_s0()[0] > 0.0);
        let fake = KnockoffSet::from_parts(
            1,
            data.x().clone(),
            ks.partition().clone(),
            ks.per_batch_s0().to_vec(),
            0,
            None,
        )
        .unwrap();
        let report = verify_gram(&data, &fake, 1e-6);
        assert!(!report.pass);
        assert!((report.max_deviation() - ks.per_batch_s0()[0]).abs() < 1e-9);
        assert!(verify_gram(&data, &fake, f64::INFINITY).pass);
    }

    #[test]
    fn cross_batch_components_are_orthogonal() {
        let data = random_design(60, 10, 7);
        let part = BatchPartition::new(
            vec![(0..5).collect(), (5..10).collect()],
            PartitionMethod::Uniform,
        )
        .unwrap();
        let ks = construct_knockoffs(&data, 2, &part, &mut rng_from(8)).unwrap();
        let q = thin_qr(data.x()).unwrap().q;
        let resid = |m: DMatrix<f64>| &m - &q * (q.transpose() * &m);
        let pick = |batch: &[usize]| {
            let cols: Vec<DVector<f64>> = batch
                .iter()
                .flat_map(|&f| (1..=2).map(move |c| (f, c)))
                .map(|(f, c)| ks.knockoff(f, c))
                .collect();
            DMatrix::from_columns(&cols)
        };
        let a = resid(pick(&part.batches()[0]));
        let b = resid(pick(&part.batches()[1]));
        assert!((a.transpose() * b).amax() < 1e-8);
    }

    #[test]
    fn requires_enough_rows() {
        let data = random_design(20, 8, 9);
        let err = construct_knockoffs(&data, 2, &BatchPartition::single(8), &mut rng_from(0)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        let (ext, ks) = prepare_knockoffs(&data, 2, &BatchPartition::single(8), None, &mut rng_from(0)).unwrap();
        assert_eq!(ext.n(), 24);
        assert_eq!(ks.extended_rows(), 4);
        assert!(verify_gram(&ext, &ks, 1e-6).pass);
    }

    #[test]
    fn construction_is_deterministic() {
        let data = random_design(30, 6, 10);
        let part = cluster_batches(data.x(), 2).unwrap();
        let a = construct_knockoffs(&data, 3, &part, &mut rng_from(1)).unwrap();
        let b = construct_knockoffs(&data, 3, &part, &mut rng_from(1)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = construct_knockoffs(&data, 3, &part, &mut rng_from(2)).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn gram_fidelity(p in 2usize..30, d in 1usize..5, bi in 0usize..3, extra in 0usize..10, seed in any::<u64>()) {
                let b = [1usize, 2, 5][bi].min(p);
                let n = (d + 1) * p + extra;
                let data = random_design(n, p, seed);
                let part = cluster_batches(data.x(), b).unwrap();
                let ks = construct_knockoffs(&data, d, &part, &mut rng_from(seed ^ 0xabc)).unwrap();
                let report = verify_gram(&data, &ks, 1e-6);
                prop_assert!(report.pass, "{:?}", report);
                prop_assert!(ks.original_discrepancy() <= 1e-6);
            }
        }
    }
}

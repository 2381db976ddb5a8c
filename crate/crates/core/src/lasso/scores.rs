use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{entry_lambdas_with_order, make_grid, random_order, GridSpec, LassoDesign};
use crate::error::{Error, Result};
use crate::knockoffs::{DesignData, KnockoffSet};

/// Per-feature scores for the original (index 0) and `d` knockoff copies,
/// plus a fixed descending order with ties broken at random.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    d: usize,
    p: usize,
    /// Row-major `p x (d+1)`.
    scores: Vec<f64>,
    /// For each feature, the indices `0..=d` from highest to lowest score.
    order: Vec<usize>,
}

fn check_scores(d: usize, scores: &[f64]) -> Result<usize> {
    if d == 0 {
        return Err(Error::Parameter("d must be >= 1".into()));
    }
    let d1 = d + 1;
    if scores.is_empty() || scores.len() % d1 != 0 {
        return Err(Error::Dimension(format!(
            "score count {} is not a positive multiple of d+1 = {d1}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::Input(format!("scores must be finite and non-negative, got {bad}")));
    }
    Ok(scores.len() / d1)
}

/// Indices of `row` sorted by score descending; ties go by descending key.
fn descending(row: &[f64], keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(keys[b].total_cmp(&keys[a])));
    idx
}

impl ScoreTable {
    /// Rank scores; `d+1` uniform tie-break keys are drawn per feature, in
    /// feature order.
    pub fn from_scores<R: Rng + ?Sized>(d: usize, scores: Vec<f64>, rng: &mut R) -> Result<Self> {
        let p = check_scores(d, &scores)?;
        let d1 = d + 1;
        let mut order = Vec::with_capacity(scores.len());
        let mut keys = vec![0.0; d1];
        for row in scores.chunks(d1) {
            keys.iter_mut().for_each(|k| *k = rng.random::<f64>());
            order.extend(descending(row, &keys));
        }
        Ok(ScoreTable { d, p, scores, order })
    }

    /// Build a table whose original ranks are given (1 = lowest, `d+1` =
    /// highest). Knockoffs are ordered by score with random tie-breaks; each
    /// rank must be consistent with the scores.
    pub fn from_ranks<R: Rng + ?Sized>(
        d: usize,
        scores: Vec<f64>,
        ranks: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let p = check_scores(d, &scores)?;
        let d1 = d + 1;
        if ranks.len() != p {
            return Err(Error::Dimension(format!("{} ranks for {p} features", ranks.len())));
        }
        let mut order = Vec::with_capacity(scores.len());
        let mut keys = vec![0.0; d1];
        for (i, (row, &r)) in scores.chunks(d1).zip(ranks).enumerate() {
            keys.iter_mut().for_each(|k| *k = rng.random::<f64>());
            if !(1..=d1).contains(&r) {
                return Err(Error::Input(format!("rank {r} of feature {i} outside 1..={d1}")));
            }
            let z = row[0];
            let above = d1 - r;
            let gt = row[1..].iter().filter(|&&s| s > z).count();
            let ge = row[1..].iter().filter(|&&s| s >= z).count();
            if above < gt || above > ge {
                return Err(Error::Input(format!("rank {r} of feature {i} contradicts its scores")));
            }
            let mut knock = descending(&row[1..], &keys[1..]);
            knock.iter_mut().for_each(|j| *j += 1);
            knock.insert(above, 0);
            order.extend(knock);
        }
        Ok(ScoreTable { d, p, scores, order })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d1(&self) -> usize {
        self.d + 1
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Scores of feature `i`: original first, then copies 1..=d.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.d1()..(i + 1) * self.d1()]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn original(&self, i: usize) -> f64 {
        self.scores[i * self.d1()]
    }

    /// Descending order of feature `i`'s `d+1` entries.
    pub fn order(&self, i: usize) -> &[usize] {
        &self.order[i * self.d1()..(i + 1) * self.d1()]
    }

    /// Rank of the original among its `d+1` scores, 1 = lowest.
    pub fn rank(&self, i: usize) -> usize {
        let pos = self.order(i).iter().position(|&j| j == 0).expect("original present");
        self.d1() - pos
    }

    pub fn ranks(&self) -> Vec<usize> {
        (0..self.p).map(|i| self.rank(i)).collect()
    }

    /// Score of the knockoff with the given descending ordinal (1 = highest
    /// knockoff).
    pub fn knockoff_ordinal(&self, i: usize, ordinal: usize) -> f64 {
        let j = self
            .order(i)
            .iter()
            .filter(|&&j| j != 0)
            .nth(ordinal - 1)
            .expect("ordinal within 1..=d");
        self.row(i)[*j]
    }

    /// Score at position `k` (0 = largest) of the descending order.
    pub fn sorted_score(&self, i: usize, k: usize) -> f64 {
        self.row(i)[self.order(i)[k]]
    }
}

/// Which `(feature, copy)` each column of a design scores; copy 0 is the
/// original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    slots: Vec<Option<(usize, usize)>>,
}

impl FeatureMap {
    pub fn new(slots: Vec<Option<(usize, usize)>>) -> Self {
        FeatureMap { slots }
    }

    pub fn slots(&self) -> &[Option<(usize, usize)>] {
        &self.slots
    }

    fn watched(&self) -> Vec<usize> {
        self.slots.iter().enumerate().filter_map(|(j, s)| s.map(|_| j)).collect()
    }
}

/// Gather entry lambdas from several fits into a `p x (d+1)` score table.
/// Every `(feature, copy)` must be supplied by exactly one fit.
pub fn entry_scores<R: Rng + ?Sized>(
    fits: &[(&[f64], &FeatureMap)],
    p: usize,
    d: usize,
    rng: &mut R,
) -> Result<ScoreTable> {
    let d1 = d + 1;
    let mut scores = vec![f64::NAN; p * d1];
    for (entry, map) in fits {
        if entry.len() != map.slots.len() {
            return Err(Error::Dimension("entry vector and feature map differ in length".into()));
        }
        for (&z, slot) in entry.iter().zip(&map.slots) {
            if let Some((f, c)) = *slot {
                if f >= p || c > d {
                    return Err(Error::Dimension(format!("slot ({f}, {c}) out of range")));
                }
                let cell = &mut scores[f * d1 + c];
                if !cell.is_nan() {
                    return Err(Error::Input(format!("slot ({f}, {c}) scored twice")));
                }
                *cell = z;
            }
        }
    }
    if let Some(k) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Input(format!("slot ({}, {}) never scored", k / d1, k % d1)));
    }
    ScoreTable::from_scores(d, scores, rng)
}

/// Per-batch lasso designs for a knockoff set. Each batch's original features
/// are scored from that batch's fit; Gram matrices are computed once and
/// reused across responses.
#[derive(Debug, Clone)]
pub struct ScoringPlan {
    d: usize,
    p: usize,
    fits: Vec<(LassoDesign, FeatureMap)>,
    fingerprint: String,
}

impl ScoringPlan {
    /// `data` is the design the knockoffs were built against (after any row
    /// extension).
    pub fn new(data: &DesignData, ks: &KnockoffSet) -> Result<Self> {
        if data.n() != ks.n() || data.p() != ks.p() {
            return Err(Error::Dimension(format!(
                "design is {}x{}, knockoffs expect {}x{}",
                data.n(),
                data.p(),
                ks.n(),
                ks.p()
            )));
        }
        Self::from_matrices(data.x(), ks)
    }

    pub fn from_matrices(x: &DMatrix<f64>, ks: &KnockoffSet) -> Result<Self> {
        let (p, d) = (ks.p(), ks.d());
        if x.ncols() != p || x.nrows() != ks.n() {
            return Err(Error::Dimension("design does not match knockoff set".into()));
        }
        let fits = ks
            .partition()
            .batches()
            .par_iter()
            .enumerate()
            .map(|(b, batch)| {
                let k = batch.len();
                let mut slots = vec![None; p + d * k];
                for &f in batch {
                    slots[f] = Some((f, 0));
                }
                for copy in 1..=d {
                    for (slot, &f) in batch.iter().enumerate() {
                        slots[p + (copy - 1) * k + slot] = Some((f, copy));
                    }
                }
                (LassoDesign::new(ks.batch_design(x, b)), FeatureMap::new(slots))
            })
            .collect();
        Ok(ScoringPlan { d, p, fits, fingerprint: ks.fingerprint().to_string() })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.fits[0].0.n()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Fit every batch on a shared grid and return the score table.
    ///
    /// RNG use: one column permutation per batch in batch order, then the
    /// tie-break keys of [`ScoreTable::from_scores`].
    pub fn score<R: Rng + ?Sized>(&self, y: &DVector<f64>, grid: GridSpec, rng: &mut R) -> Result<ScoreTable> {
        let n = self.n();
        if y.len() != n {
            return Err(Error::Dimension(format!("response has {} entries, design {n} rows", y.len())));
        }
        let matrices: Vec<&DMatrix<f64>> = self.fits.iter().map(|(m, _)| m.x()).collect();
        let grid = make_grid(&matrices, y, n, grid.count, grid.ratio)?;
        let orders: Vec<Vec<usize>> = self.fits.iter().map(|(m, _)| random_order(m.ncols(), rng)).collect();
        let entries: Vec<Vec<f64>> = self
            .fits
            .par_iter()
            .zip(orders.par_iter())
            .map(|((design, map), order)| {
                let watch = map.watched();
                entry_lambdas_with_order(design, y, &grid, order, Some(&watch))
            })
            .collect::<Result<_>>()?;
        let fits: Vec<(&[f64], &FeatureMap)> =
            entries.iter().zip(&self.fits).map(|(e, (_, m))| (e.as_slice(), m)).collect();
        entry_scores(&fits, self.p, self.d, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knockoffs::{cluster_batches, construct_knockoffs, BatchPartition};
    use crate::seed::rng_from;
    use rand_distr::StandardNormal;

    #[test]
    fn ranks_follow_scores() {
        let t = ScoreTable::from_scores(2, vec![3.0, 1.0, 2.0, 0.0, 5.0, 4.0], &mut rng_from(0)).unwrap();
        assert_eq!(t.ranks(), vec![3, 1]);
        assert_eq!(t.knockoff_ordinal(0, 1), 2.0);
        assert_eq!(t.knockoff_ordinal(1, 2), 4.0);
        assert_eq!(t.sorted_score(1, 0), 5.0);
    }

    #[test]
    fn all_zero_ties_are_uniform() {
        let mut rng = rng_from(11);
        let mut counts = [0usize; 4];
        let reps = 20_000;
        for _ in 0..reps {
            let t = ScoreTable::from_scores(3, vec![0.0; 4], &mut rng).unwrap();
            counts[t.rank(0) - 1] += 1;
        }
        for c in counts {
            let frac = c as f64 / reps as f64;
            assert!((frac - 0.25).abs() < 0.015, "{counts:?}");
        }
    }

    #[test]
    fn rejects_bad_scores() {
        assert!(ScoreTable::from_scores(2, vec![1.0; 5], &mut rng_from(0)).is_err());
        assert!(ScoreTable::from_scores(1, vec![1.0, f64::NAN], &mut rng_from(0)).is_err());
        assert!(ScoreTable::from_scores(1, vec![1.0, -1.0], &mut rng_from(0)).is_err());
        assert!(ScoreTable::from_scores(0, vec![1.0], &mut rng_from(0)).is_err());
    }

    #[test]
    fn from_ranks_respects_given_rank() {
        let scores = vec![1.0, 1.0, 1.0, 2.0, 0.5, 1.0];
        let t = ScoreTable::from_ranks(2, scores.clone(), &[2, 3], &mut rng_from(0)).unwrap();
        assert_eq!(t.ranks(), vec![2, 3]);
        assert!(ScoreTable::from_ranks(2, scores.clone(), &[2, 1], &mut rng_from(0)).is_err());
        assert!(ScoreTable::from_ranks(2, scores, &[4, 1], &mut rng_from(0)).is_err());
    }

    #[test]
    fn entry_scores_requires_full_coverage() {
        let map = FeatureMap::new(vec![Some((0, 0)), Some((0, 1)), None]);
        let ok = entry_scores(&[(&[0.5, 0.2, 9.0], &map)], 1, 1, &mut rng_from(0)).unwrap();
        assert_eq!(ok.row(0), &[0.5, 0.2]);
        assert!(entry_scores(&[(&[0.5, 0.2, 9.0], &map)], 2, 1, &mut rng_from(0)).is_err());
        assert!(entry_scores(&[(&[0.5, 0.2, 9.0], &map), (&[0.5, 0.2, 9.0], &map)], 1, 1, &mut rng_from(0)).is_err());
    }

    fn plan_fixture(b: usize) -> (ScoringPlan, DVector<f64>) {
        let (n, p, d) = (40, 8, 2);
        let mut rng = rng_from(3);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 3.0 * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let data = DesignData::new(x, y.clone()).unwrap();
        let part = if b == 1 { BatchPartition::single(p) } else { cluster_batches(data.x(), b).unwrap() };
        let ks = construct_knockoffs(&data, d, &part, &mut rng_from(4)).unwrap();
        (ScoringPlan::new(&data, &ks).unwrap(), y)
    }

    #[test]
    fn plan_scores_every_slot_and_is_deterministic() {
        let (plan, y) = plan_fixture(3);
        let spec = GridSpec::new(5 * 3 * 8, 1e-3).unwrap();
        let a = plan.score(&y, spec, &mut rng_from(1)).unwrap();
        let b = plan.score(&y, spec, &mut rng_from(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.p(), a.d()), (8, 2));
        assert!(a.original(0) > 0.0);
        assert_eq!(a.rank(0), 3);
    }

    #[test]
    fn single_batch_plan_matches_full_path() {
        let (plan, y) = plan_fixture(1);
        let spec = GridSpec::new(60, 1e-3).unwrap();
        let table = plan.score(&y, spec, &mut rng_from(2)).unwrap();
        let (design, _) = &plan.fits[0];
        let grid = make_grid(&[design.x()], &y, plan.n(), 60, 1e-3).unwrap();
        let path = super::super::lasso_path(design, &y, &grid, &mut rng_from(2)).unwrap();
        let entry = path.entry_lambdas();
        for f in 0..8 {
            assert_eq!(table.original(f), entry[f]);
            for c in 1..=2 {
                assert_eq!(table.row(f)[c], entry[8 * c + f]);
            }
        }
    }
}

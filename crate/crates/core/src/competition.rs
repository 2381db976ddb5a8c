//! Label assignment, the mirandom map and the rejection rule.
//!
//! Each feature gets a label from the rank of its original score among its
//! `d+1` scores: an original win (`1`), a decoy win (`-1`) or ignored (`0`).
//! A selected score `W` is then chosen per feature, features are sorted by
//! `W`, and the longest prefix whose estimated FDR stays below `alpha` is
//! reported.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::ScoreTable;

/// Original-win threshold `c = i_c/d1` and decoy-win threshold
/// `lambda = i_lambda/d1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TuningParams {
    pub d1: usize,
    pub i_c: usize,
    pub i_lambda: usize,
}

impl TuningParams {
    pub fn new(d: usize, i_c: usize, i_lambda: usize) -> Result<Self> {
        let d1 = d + 1;
        if d == 0 {
            return Err(Error::Parameter("d must be >= 1".into()));
        }
        if i_c < 1 || i_c > i_lambda || i_lambda > d1 - 1 {
            return Err(Error::Parameter(format!(
                "need 1 <= i_c <= i_lambda <= {}, got i_c = {i_c}, i_lambda = {i_lambda}",
                d1 - 1
            )));
        }
        Ok(TuningParams { d1, i_c, i_lambda })
    }

    /// `c = lambda = 1/2`, rounded down to the rank grid when `d+1` is odd.
    pub fn mirror(d: usize) -> Result<Self> {
        let half = (d + 1) / 2;
        Self::new(d, half, half)
    }

    /// `c = lambda = 1/(d+1)`.
    pub fn max(d: usize) -> Result<Self> {
        Self::new(d, 1, 1)
    }

    /// Map real `c`, `lambda` onto the rank grid; both must be multiples of
    /// `1/(d+1)`.
    pub fn from_fractions(d: usize, c: f64, lambda: f64) -> Result<Self> {
        let d1 = (d + 1) as f64;
        let snap = |v: f64, name: &str| -> Result<usize> {
            let i = (v * d1).round();
            if !(v.is_finite() && (i / d1 - v).abs() <= 1e-9 && i >= 0.0) {
                return Err(Error::Parameter(format!("{name} = {v} is not a multiple of 1/{}", d + 1)));
            }
            Ok(i as usize)
        };
        Self::new(d, snap(c, "c")?, snap(lambda, "lambda")?)
    }

    pub fn d(&self) -> usize {
        self.d1 - 1
    }

    pub fn c(&self) -> f64 {
        self.i_c as f64 / self.d1 as f64
    }

    pub fn lambda(&self) -> f64 {
        self.i_lambda as f64 / self.d1 as f64
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.d1 != d + 1 {
            return Err(Error::Parameter(format!("params are for d = {}, scores have d = {d}", self.d())));
        }
        Self::new(d, self.i_c, self.i_lambda).map(|_| ())
    }
}

/// All pairs with `1/d1 <= c <= lambda <= 1/2`, ordered by `(i_lambda, i_c)`.
pub fn optimization_grid(d: usize) -> Vec<TuningParams> {
    let d1 = d + 1;
    let top = d1 / 2;
    let mut grid = Vec::new();
    for i_lambda in 1..=top {
        for i_c in 1..=i_lambda {
            grid.push(TuningParams { d1, i_c, i_lambda });
        }
    }
    grid
}

/// Labels, selected scores and the sorted order for one score table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompetitionOutcome {
    pub labels: Vec<i8>,
    pub w: Vec<f64>,
    /// Feature indices sorted by `w` descending, ties broken at random.
    pub order: Vec<usize>,
    pub params: TuningParams,
}

/// Discoveries at one threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub i_star: usize,
    /// Discovered features in ascending index order.
    pub discoveries: Vec<usize>,
}

fn label_for(rank: usize, p: &TuningParams) -> i8 {
    if rank > p.d1 - p.i_c {
        1
    } else if rank <= p.d1 - p.i_lambda {
        -1
    } else {
        0
    }
}

pub fn assign_labels(scores: &ScoreTable, params: &TuningParams) -> Result<Vec<i8>> {
    params.check(scores.d())?;
    Ok((0..scores.p()).map(|i| label_for(scores.rank(i), params)).collect())
}

/// Knockoff ordinal (1 = largest knockoff) picked for a decoy win at rank `r`
/// given a uniform draw `u`. The rank's interval
/// `[(r-1) i_c, r i_c)` is laid over cells `[(j-1) m, j m)` with
/// `m = d1 - i_lambda`; `u` picks a point in the interval.
pub fn decoy_ordinal(params: &TuningParams, rank: usize, u: f64) -> usize {
    let m = (params.d1 - params.i_lambda) as f64;
    let pos = ((rank - 1) as f64 + u) * params.i_c as f64;
    ((pos / m).floor() as usize + 1).min(params.i_c)
}

/// Exact probability of each ordinal `1..=i_c` for a decoy win at rank `r`.
pub fn decoy_ordinal_probabilities(params: &TuningParams, rank: usize) -> Vec<f64> {
    let m = params.d1 - params.i_lambda;
    let (lo, hi) = ((rank - 1) * params.i_c, rank * params.i_c);
    (1..=params.i_c)
        .map(|j| {
            let (a, b) = ((j - 1) * m, j * m);
            let overlap = hi.min(b).saturating_sub(lo.max(a));
            overlap as f64 / params.i_c as f64
        })
        .collect()
}

/// Selected score per feature. One uniform draw is consumed for every
/// feature regardless of its label.
pub fn mirandom_select<R: Rng + ?Sized>(
    scores: &ScoreTable,
    labels: &[i8],
    params: &TuningParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.check(scores.d())?;
    if labels.len() != scores.p() {
        return Err(Error::Dimension(format!("{} labels for {} features", labels.len(), scores.p())));
    }
    let d1 = params.d1;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let u: f64 = rng.random();
            match l {
                1 => scores.original(i),
                0 => scores.row(i)[((u * d1 as f64) as usize).min(d1 - 1)],
                _ => scores.knockoff_ordinal(i, decoy_ordinal(params, scores.rank(i), u)),
            }
        })
        .collect())
}

/// Feature order by `w` descending with one random tie-break key per feature.
pub fn sort_by_w<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> Vec<usize> {
    let keys: Vec<f64> = w.iter().map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(keys[b].total_cmp(&keys[a])));
    order
}

/// Labels, mirandom and sorting in one call. RNG use: `p` mirandom draws,
/// then `p` sort keys.
pub fn compete<R: Rng + ?Sized>(scores: &ScoreTable, params: &TuningParams, rng: &mut R) -> Result<CompetitionOutcome> {
    let labels = assign_labels(scores, params)?;
    let w = mirandom_select(scores, &labels, params, rng)?;
    let order = sort_by_w(&w, rng);
    Ok(CompetitionOutcome { labels, w, order, params: *params })
}

/// Largest prefix of the `w` order with `(1 + #decoy) / max(#orig, 1) * c /
/// (1 - lambda) <= alpha`; discoveries are its original wins.
pub fn select_discoveries(outcome: &CompetitionOutcome, alpha: f64) -> Selection {
    let TuningParams { d1, i_c, i_lambda } = outcome.params;
    let (i_c, m) = (i_c as f64, (d1 - i_lambda) as f64);
    let (mut orig, mut decoy) = (0usize, 0usize);
    let mut i_star = 0;
    for (pos, &f) in outcome.order.iter().enumerate() {
        match outcome.labels[f] {
            1 => orig += 1,
            -1 => decoy += 1,
            _ => {}
        }
        if (1 + decoy) as f64 * i_c <= alpha * orig.max(1) as f64 * m {
            i_star = pos + 1;
        }
    }
    let mut discoveries: Vec<usize> =
        outcome.order[..i_star].iter().copied().filter(|&f| outcome.labels[f] == 1).collect();
    discoveries.sort_unstable();
    Selection { i_star, discoveries }
}

/// Single-knockoff selection written directly in terms of signed statistics
/// and a threshold scan. Consumes randomness exactly like
/// [`ScoreTable::from_scores`] with `d = 1` followed by [`compete`], so the
/// two agree draw for draw.
pub fn knockoff_plus_reference<R: Rng + ?Sized>(z: &[f64], z_tilde: &[f64], alpha: f64, rng: &mut R) -> Result<Vec<usize>> {
    if z.len() != z_tilde.len() {
        return Err(Error::Dimension("z and z_tilde differ in length".into()));
    }
    let p = z.len();
    let pair_keys: Vec<(f64, f64)> = (0..p).map(|_| (rng.random(), rng.random())).collect();
    for _ in 0..p {
        let _: f64 = rng.random();
    }
    let w_keys: Vec<f64> = (0..p).map(|_| rng.random()).collect();

    // Magnitude max(Z, Z̃) with the tie-break key folded into a strict order;
    // sign +1 when the original beats its knockoff.
    let original_wins: Vec<bool> = (0..p)
        .map(|i| (z[i], pair_keys[i].0).partial_cmp(&(z_tilde[i], pair_keys[i].1)) == Some(std::cmp::Ordering::Greater))
        .collect();
    let magnitude = |i: usize| (z[i].max(z_tilde[i]), w_keys[i]);
    let mut ascending: Vec<usize> = (0..p).collect();
    ascending.sort_by(|&a, &b| magnitude(a).partial_cmp(&magnitude(b)).unwrap());

    // Candidate thresholds from the most inclusive upwards; the first one
    // meeting the bound is the knockoff+ threshold.
    let mut positives = original_wins.iter().filter(|&&w| w).count();
    let mut negatives = p - positives;
    for (k, &t) in ascending.iter().enumerate() {
        let fdr_hat = (1 + negatives) as f64 / positives.max(1) as f64;
        if fdr_hat <= alpha {
            let mut chosen: Vec<usize> = ascending[k..].iter().copied().filter(|&i| original_wins[i]).collect();
            chosen.sort_unstable();
            return Ok(chosen);
        }
        if original_wins[t] {
            positives -= 1;
        } else {
            negatives -= 1;
        }
    }
    Ok(Vec::new())
}

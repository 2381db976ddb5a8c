//! Model-aware bootstrap and the procedures tuned with it.
//!
//! A preliminary pass over the real scores fixes a conjectured model. Each
//! bootstrap sample draws a set `J` of conjectured-included features, refits
//! `y` on `X[:, J]`, simulates a fresh response from that fit and rescores it
//! against the existing knockoffs. Tuning parameters (and optionally `d`) are
//! then chosen to maximize the mean number of discoveries that fall in `J`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::competition::{compete, optimization_grid, select_discoveries, CompetitionOutcome, Selection, TuningParams};
use crate::error::{Error, Result};
use crate::knockoffs::DesignData;
use crate::lasso::{GridSpec, ScoreTable, ScoringPlan};
use crate::numerics::least_squares;
use crate::seed::{derive, derived_rng, rng_from, stream};

/// Estimated null fraction `#{p_i > i/d1} / (p (1 - i/d1))`, clipped to
/// `[0, 1]`, with empirical p-values `p_i = (d1 - r_i + 1)/d1`.
pub fn null_fraction(scores: &ScoreTable, i: usize) -> f64 {
    let d1 = scores.d1();
    // p_i > i/d1  <=>  d1 - r_i + 1 > i
    let above = scores.ranks().iter().filter(|&&r| d1 + 1 - r > i).count();
    let lambda = i as f64 / d1 as f64;
    (above as f64 / (scores.p() as f64 * (1.0 - lambda))).clamp(0.0, 1.0)
}

/// `lambda0 = i/d1` minimizing the null-fraction estimate over
/// `i in 1..=floor(d1/2)`, ties going to the larger `i`. Returned as
/// parameters with `c = lambda = lambda0`.
pub fn estimate_lambda0(scores: &ScoreTable) -> TuningParams {
    let d = scores.d();
    let mut best = (f64::INFINITY, 1);
    for i in 1..=scores.d1() / 2 {
        let pi0 = null_fraction(scores, i);
        if pi0 <= best.0 {
            best = (pi0, i);
        }
    }
    TuningParams::new(d, best.1, best.1).expect("lambda0 on the rank grid")
}

/// Selected scores and labels from the preliminary pass, plus each
/// feature's probability of being conjectured part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjectureModel {
    pub params: TuningParams,
    pub w_fixed: Vec<f64>,
    pub l_fixed: Vec<i8>,
    pub p_false: Vec<f64>,
}

/// Running estimated FDR at every position of the outcome's order.
fn running_fdr(outcome: &CompetitionOutcome) -> Vec<f64> {
    let factor = outcome.params.c() / (1.0 - outcome.params.lambda());
    let (mut orig, mut decoy) = (0usize, 0usize);
    outcome
        .order
        .iter()
        .map(|&f| {
            match outcome.labels[f] {
                1 => orig += 1,
                -1 => decoy += 1,
                _ => {}
            }
            (1 + decoy) as f64 / orig.max(1) as f64 * factor
        })
        .collect()
}

pub fn build_conjecture<R: Rng + ?Sized>(
    scores: &ScoreTable,
    lambda0: &TuningParams,
    rng: &mut R,
) -> Result<ConjectureModel> {
    if lambda0.i_c != lambda0.i_lambda || lambda0.i_c > lambda0.d1 / 2 {
        return Err(Error::Parameter(format!(
            "lambda0 needs c = lambda <= 1/2, got i_c = {}, i_lambda = {}",
            lambda0.i_c, lambda0.i_lambda
        )));
    }
    let outcome = compete(scores, lambda0, rng)?;
    let fdr = running_fdr(&outcome);
    let mut p_false = vec![0.0; scores.p()];
    for (pos, &f) in outcome.order.iter().enumerate() {
        if outcome.labels[f] == 1 {
            p_false[f] = (1.0 - fdr[pos]).max(0.0);
        }
    }
    Ok(ConjectureModel { params: *lambda0, w_fixed: outcome.w, l_fixed: outcome.labels, p_false })
}

/// One model-aware resample with its score table for every considered `d`.
#[derive(Debug, Clone)]
pub struct BootstrapSample {
    pub index: usize,
    pub seed: u64,
    pub y: DVector<f64>,
    /// Conjectured-included features, ascending.
    pub j: Vec<usize>,
    pub tables: BTreeMap<usize, ScoreTable>,
    /// Fingerprint of the knockoffs each table was scored against.
    pub fingerprints: BTreeMap<usize, String>,
}

/// Draw `m_b` samples. `data` holds the original design; `plans` gives the
/// scoring plan for each `d`, whose row counts may exceed the original (zero
/// rows carry pure noise). Sub-seeds are drawn from `rng` up front and each
/// sample is generated from its own stream.
#[allow(clippy::too_many_arguments)]
pub fn draw_bootstrap<R: Rng + ?Sized>(
    data: &DesignData,
    conjecture: &ConjectureModel,
    plans: &[(usize, &ScoringPlan)],
    sigma_hat: f64,
    m_b: usize,
    grid: GridSpec,
    rng: &mut R,
) -> Result<Vec<BootstrapSample>> {
    let p = data.p();
    if conjecture.p_false.len() != p {
        return Err(Error::Dimension(format!("conjecture covers {} features, design {p}", conjecture.p_false.len())));
    }
    if plans.is_empty() {
        return Err(Error::Parameter("no knockoff sets to score against".into()));
    }
    if !(sigma_hat.is_finite() && sigma_hat >= 0.0) {
        return Err(Error::Parameter(format!("sigma_hat must be finite and >= 0, got {sigma_hat}")));
    }
    let n0 = data.n_original();
    for (d, plan) in plans {
        if plan.d() != *d || plan.p() != p || plan.n() < n0 {
            return Err(Error::Dimension(format!("scoring plan for d = {d} does not match the design")));
        }
    }
    let rows = plans.iter().map(|(_, plan)| plan.n()).max().unwrap_or(n0);
    let x0 = data.x().rows(0, n0).into_owned();
    let y0 = data.y().rows(0, n0).into_owned();
    let seeds: Vec<u64> = (0..m_b).map(|_| rng.random()).collect();

    seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            let mut rng = rng_from(seed);
            let j: Vec<usize> = conjecture
                .p_false
                .iter()
                .enumerate()
                .filter_map(|(i, &q)| (rng.random::<f64>() < q).then_some(i))
                .collect();
            let mut y = DVector::zeros(rows);
            if !j.is_empty() {
                let xj = DMatrix::from_fn(n0, j.len(), |r, c| x0[(r, j[c])]);
                let beta = least_squares(&xj, &y0)?;
                y.rows_mut(0, n0).copy_from(&(xj * beta));
            }
            for v in y.iter_mut() {
                *v += sigma_hat * rng.sample::<f64, _>(StandardNormal);
            }
            let mut tables = BTreeMap::new();
            let mut fingerprints = BTreeMap::new();
            for (d, plan) in plans {
                let yd = y.rows(0, plan.n()).into_owned();
                tables.insert(*d, plan.score(&yd, grid, &mut rng)?);
                fingerprints.insert(*d, plan.fingerprint().to_string());
            }
            Ok(BootstrapSample { index, seed, y, j, tables, fingerprints })
        })
        .collect()
}

/// Bootstrap objective for one parameter pair: total and mean of `|D ∩ J_l|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamScore {
    pub params: TuningParams,
    pub total: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub alpha: f64,
    pub best: ParamScore,
    pub grid: Vec<ParamScore>,
}

fn true_hits(sel: &Selection, j: &[usize]) -> usize {
    sel.discoveries.iter().filter(|f| j.binary_search(f).is_ok()).count()
}

/// [`optimize_c_lambda`] at several thresholds, sharing the competitions
/// across thresholds.
pub fn optimize_c_lambda_many(samples: &[BootstrapSample], d: usize, alphas: &[f64]) -> Result<Vec<Optimum>> {
    if samples.is_empty() {
        return Err(Error::Parameter("no bootstrap samples".into()));
    }
    let grid = optimization_grid(d);
    // totals[g][a]
    let totals: Vec<Vec<usize>> = grid
        .par_iter()
        .map(|params| {
            let mut acc = vec![0usize; alphas.len()];
            for s in samples {
                let table = s
                    .tables
                    .get(&d)
                    .ok_or_else(|| Error::Parameter(format!("bootstrap sample {} has no table for d = {d}", s.index)))?;
                let label = [stream::OPTIMIZE, d as u64, params.i_c as u64, params.i_lambda as u64];
                let mut rng = derived_rng(s.seed, &label);
                let outcome = compete(table, params, &mut rng)?;
                for (a, &alpha) in acc.iter_mut().zip(alphas) {
                    *a += true_hits(&select_discoveries(&outcome, alpha), &s.j);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let m = samples.len() as f64;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let scored: Vec<ParamScore> = grid
                .iter()
                .zip(&totals)
                .map(|(params, t)| ParamScore { params: *params, total: t[a], mean: t[a] as f64 / m })
                .collect();
            // grid is already in (i_lambda, i_c) order, so the first maximum wins ties
            let best = *scored.iter().reduce(|b, s| if s.total > b.total { s } else { b }).expect("non-empty grid");
            Optimum { alpha, best, grid: scored }
        })
        .collect())
}

/// Pair `(c, lambda)` with `1/d1 <= c <= lambda <= 1/2` maximizing the mean
/// number of conjectured-true discoveries over the bootstrap samples.
pub fn optimize_c_lambda(samples: &[BootstrapSample], d: usize, alpha: f64) -> Result<Optimum> {
    Ok(optimize_c_lambda_many(samples, d, &[alpha])?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiKnockoffResult {
    pub d: usize,
    pub optimum: Optimum,
    pub outcome: CompetitionOutcome,
    pub selection: Selection,
}

/// Tune `(c, lambda)` on the bootstrap samples, then select on the real
/// scores.
pub fn multi_knockoff<R: Rng + ?Sized>(
    scores: &ScoreTable,
    samples: &[BootstrapSample],
    alpha: f64,
    rng: &mut R,
) -> Result<MultiKnockoffResult> {
    let optimum = optimize_c_lambda(samples, scores.d(), alpha)?;
    finish(scores, optimum, rng)
}

fn finish<R: Rng + ?Sized>(scores: &ScoreTable, optimum: Optimum, rng: &mut R) -> Result<MultiKnockoffResult> {
    let outcome = compete(scores, &optimum.best.params, rng)?;
    let selection = select_discoveries(&outcome, optimum.alpha);
    Ok(MultiKnockoffResult { d: scores.d(), optimum, outcome, selection })
}

/// Pick the `d` whose tuned parameters reach the largest bootstrap objective
/// (ties to the smaller `d`) and run multi-knockoff with it.
pub fn multi_knockoff_select<R: Rng + ?Sized>(
    scores_per_d: &[&ScoreTable],
    samples: &[BootstrapSample],
    alpha: f64,
    rng: &mut R,
) -> Result<MultiKnockoffResult> {
    let (table, optimum) = choose_d(scores_per_d, samples, alpha)?;
    finish(table, optimum, rng)
}

/// The chosen table and its tuning, without running the final selection.
pub fn choose_d<'a>(
    scores_per_d: &[&'a ScoreTable],
    samples: &[BootstrapSample],
    alpha: f64,
) -> Result<(&'a ScoreTable, Optimum)> {
    if scores_per_d.is_empty() {
        return Err(Error::Parameter("empty d list".into()));
    }
    let mut ranked: Vec<&ScoreTable> = scores_per_d.to_vec();
    ranked.sort_by_key(|t| t.d());
    let mut best: Option<(&ScoreTable, Optimum)> = None;
    for table in ranked {
        let opt = optimize_c_lambda(samples, table.d(), alpha)?;
        if best.as_ref().is_none_or(|(_, b)| opt.best.total > b.best.total) {
            best = Some((table, opt));
        }
    }
    Ok(best.expect("non-empty"))
}

/// Sub-seed of bootstrap sample `l` under a master seed, for callers that
/// want to regenerate a single sample.
pub fn sample_seed(master: u64, l: usize) -> u64 {
    derive(master, &[stream::BOOTSTRAP, l as u64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knockoffs::{construct_knockoffs, BatchPartition};

    fn table_from_ranks(d: usize, ranks: &[usize]) -> ScoreTable {
        let mut scores = Vec::new();
        for &r in ranks {
            scores.push(r as f64 - 0.5);
            scores.extend((1..=d).map(|k| k as f64));
        }
        ScoreTable::from_scores(d, scores, &mut rng_from(0)).unwrap()
    }

    #[test]
    fn lambda0_d1_is_half() {
        let t = table_from_ranks(1, &[1, 2, 2, 1, 2]);
        assert_eq!(estimate_lambda0(&t).c(), 0.5);
    }

    #[test]
    fn lambda0_all_wins_takes_largest() {
        let t = table_from_ranks(5, &[6; 10]);
        let l = estimate_lambda0(&t);
        assert_eq!((l.i_c, l.i_lambda), (3, 3));
        for i in 1..=3 {
            assert_eq!(null_fraction(&t, i), 0.0);
        }
    }

    #[test]
    fn lambda0_under_null_has_pi0_near_one() {
        let d = 3;
        let p = 10_000;
        let mut rng = rng_from(42);
        let ranks: Vec<usize> = (0..p).map(|_| rng.random_range(1..=d + 1)).collect();
        let t = table_from_ranks(d, &ranks);
        let l = estimate_lambda0(&t);
        let pi0 = null_fraction(&t, l.i_c);
        let lambda = l.lambda();
        let se = (lambda / ((1.0 - lambda) * p as f64)).sqrt();
        assert!((pi0 - 1.0).abs() <= 3.0 * se, "pi0 {pi0}, se {se}");
    }

    #[test]
    fn conjecture_examples() {
        let t = table_from_ranks(1, &[1, 1, 1]);
        let half = TuningParams::mirror(1).unwrap();
        let c = build_conjecture(&t, &half, &mut rng_from(0)).unwrap();
        assert!(c.p_false.iter().all(|&q| q == 0.0));

        // one original win with the largest W, everything else a decoy win
        let scores = vec![9.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0];
        let t = ScoreTable::from_scores(1, scores, &mut rng_from(0)).unwrap();
        let c = build_conjecture(&t, &half, &mut rng_from(0)).unwrap();
        assert_eq!(c.l_fixed, vec![1, -1, -1, -1]);
        let ratio = half.c() / (1.0 - half.lambda());
        assert_eq!(c.p_false, vec![(1.0 - ratio).max(0.0), 0.0, 0.0, 0.0]);

        let t = ScoreTable::from_scores(3, vec![4.0, 1.0, 2.0, 3.0, 9.0, 0.0, 0.0, 0.0], &mut rng_from(0)).unwrap();
        let l = TuningParams::new(3, 1, 1).unwrap();
        let c = build_conjecture(&t, &l, &mut rng_from(0)).unwrap();
        // feature 1 leads with ratio 1/3, feature 0 follows with 1/6
        assert!((c.p_false[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.p_false[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!(build_conjecture(&t, &TuningParams::new(3, 1, 2).unwrap(), &mut rng_from(0)).is_err());
    }

    fn fixture(seed: u64) -> (DesignData, ScoringPlan) {
        let (n, p) = (60, 10);
        let mut rng = rng_from(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut data = DesignData::new(x, DVector::zeros(n)).unwrap();
        let y = data.x().column(0) * 8.0 + DVector::from_fn(n, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal));
        data = data.with_response(y).unwrap();
        let ks = construct_knockoffs(&data, 2, &BatchPartition::single(p), &mut rng_from(seed + 1)).unwrap();
        let plan = ScoringPlan::new(&data, &ks).unwrap();
        (data, plan)
    }

    fn conjecture(p: usize, p_false: Vec<f64>) -> ConjectureModel {
        ConjectureModel {
            params: TuningParams::mirror(1).unwrap(),
            w_fixed: vec![0.0; p],
            l_fixed: vec![0; p],
            p_false,
        }
    }

    #[test]
    fn empty_conjecture_gives_pure_noise() {
        let (data, plan) = fixture(1);
        let grid = GridSpec::new(5 * 3 * 10, 1e-3).unwrap();
        let samples =
            draw_bootstrap(&data, &conjecture(10, vec![0.0; 10]), &[(2, &plan)], 1.0, 4, grid, &mut rng_from(3))
                .unwrap();
        assert_eq!(samples.len(), 4);
        assert!(samples.iter().all(|s| s.j.is_empty()));
        let seeds: Vec<u64> = samples.iter().map(|s| s.seed).collect();
        let mut dedup = seeds.clone();
        dedup.dedup();
        assert_eq!(seeds, dedup);
        let mean = samples[0].y.mean();
        assert!(mean.abs() < 0.5);
    }

    #[test]
    fn planted_feature_wins_in_bootstrap() {
        let (data, plan) = fixture(2);
        let mut q = vec![0.0; 10];
        q[0] = 1.0;
        let grid = GridSpec::new(150, 1e-3).unwrap();
        let samples = draw_bootstrap(&data, &conjecture(10, q), &[(2, &plan)], 1e-3, 40, grid, &mut rng_from(5)).unwrap();
        let wins = samples.iter().filter(|s| s.j == vec![0] && s.tables[&2].rank(0) == 3).count();
        assert!(wins as f64 >= 0.95 * 40.0, "{wins}");
        assert!(samples.iter().all(|s| s.fingerprints[&2] == plan.fingerprint()));
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let (data, plan) = fixture(3);
        let grid = GridSpec::new(150, 1e-3).unwrap();
        let conj = conjecture(10, vec![0.5; 10]);
        let a = draw_bootstrap(&data, &conj, &[(2, &plan)], 0.5, 3, grid, &mut rng_from(7)).unwrap();
        let b = draw_bootstrap(&data, &conj, &[(2, &plan)], 0.5, 3, grid, &mut rng_from(7)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.seed, &x.j, &x.y, &x.tables), (y.seed, &y.j, &y.y, &y.tables));
        }
    }

    fn null_samples(d: usize, m: usize) -> Vec<BootstrapSample> {
        (0..m)
            .map(|l| {
                let mut rng = rng_from(l as u64);
                let scores: Vec<f64> = (0..20 * (d + 1)).map(|_| rng.random()).collect();
                let mut tables = BTreeMap::new();
                tables.insert(d, ScoreTable::from_scores(d, scores, &mut rng).unwrap());
                BootstrapSample {
                    index: l,
                    seed: l as u64,
                    y: DVector::zeros(0),
                    j: Vec::new(),
                    tables,
                    fingerprints: BTreeMap::new(),
                }
            })
            .collect()
    }

    #[test]
    fn optimizer_grid_and_ties() {
        let samples = null_samples(3, 4);
        let opt = optimize_c_lambda(&samples, 3, 0.2).unwrap();
        assert_eq!(opt.grid.len(), 3);
        assert_eq!((opt.best.params.i_c, opt.best.params.i_lambda), (1, 1));
        assert_eq!(opt.best.mean, 0.0);
        let one = optimize_c_lambda(&null_samples(1, 2), 1, 0.2).unwrap();
        assert_eq!(one.best.params, TuningParams::mirror(1).unwrap());
    }

    #[test]
    fn select_ties_go_to_smaller_d() {
        let mut samples = null_samples(1, 3);
        let extra = null_samples(3, 3);
        for (s, e) in samples.iter_mut().zip(extra) {
            s.tables.extend(e.tables);
        }
        let t1 = samples[0].tables[&1].clone();
        let t3 = samples[0].tables[&3].clone();
        let res = multi_knockoff_select(&[&t3, &t1], &samples, 0.2, &mut rng_from(0)).unwrap();
        assert_eq!(res.d, 1);
        let single = multi_knockoff(&t1, &samples, 0.2, &mut rng_from(0)).unwrap();
        assert_eq!(res, single);
        let zero = multi_knockoff(&t3, &samples, 0.0, &mut rng_from(0)).unwrap();
        assert!(zero.selection.discoveries.is_empty());
    }

    #[test]
    fn multi_knockoff_matches_fixed_run_at_chosen_pair() {
        // strong planted conjecture: every sample has the same J with clear wins
        let d = 3;
        let samples: Vec<BootstrapSample> = (0..5)
            .map(|l| {
                let mut scores = Vec::new();
                for i in 0..30 {
                    if i < 8 {
                        scores.extend([10.0 + i as f64, 1.0, 0.5, 0.2]);
                    } else {
                        scores.extend([0.1, 0.3, 0.2, 0.4]);
                    }
                }
                let mut tables = BTreeMap::new();
                tables.insert(d, ScoreTable::from_scores(d, scores, &mut rng_from(l)).unwrap());
                BootstrapSample {
                    index: l as usize,
                    seed: l,
                    y: DVector::zeros(0),
                    j: (0..8).collect(),
                    tables,
                    fingerprints: BTreeMap::new(),
                }
            })
            .collect();
        let real = samples[0].tables[&d].clone();
        let res = multi_knockoff(&real, &samples, 0.2, &mut rng_from(9)).unwrap();
        let fixed = compete(&real, &res.optimum.best.params, &mut rng_from(9)).unwrap();
        assert_eq!(res.selection, select_discoveries(&fixed, 0.2));
        assert!(res.optimum.best.total > 0);
    }
}

//! Simulated experiments: data generation, per-replicate pipelines and
//! aggregation of FDP and power over a grid of FDR thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::competition::{compete, knockoff_plus_reference, select_discoveries, TuningParams};
use crate::error::{Error, Result};
use crate::knockoffs::{construct_knockoffs, estimate_sigma, extend_design, BatchPartition, DesignData, PartitionMethod};
use crate::lasso::{grid_count, GridSpec, ScoreTable, ScoringPlan, DEFAULT_GRID_RATIO, DEFAULT_NLAMBDA_MULTIPLIER};
use crate::resampling::{build_conjecture, draw_bootstrap, estimate_lambda0, optimize_c_lambda_many, Optimum};
use crate::seed::{derive, derived_rng, label, stream};

/// Thresholds 0.001..0.009 by 0.001, 0.01..0.29 by 0.01, 0.30..0.95 by 0.05.
pub fn default_alphas() -> Vec<f64> {
    let mut v: Vec<f64> = (1..=9).map(|i| i as f64 / 1000.0).collect();
    v.extend((1..=29).map(|i| i as f64 / 100.0));
    v.extend((6..=19).map(|i| i as f64 * 5.0 / 100.0));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Covariance {
    /// `rho^|i-j|`
    Toeplitz { rho: f64 },
    /// Unit diagonal, `rho` elsewhere.
    Equicorrelated { rho: f64 },
}

impl Default for Covariance {
    fn default() -> Self {
        Covariance::Toeplitz { rho: 0.0 }
    }
}

impl Covariance {
    pub fn rho(&self) -> f64 {
        match *self {
            Covariance::Toeplitz { rho } | Covariance::Equicorrelated { rho } => rho,
        }
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        match *self {
            Covariance::Toeplitz { rho } => DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32)),
            Covariance::Equicorrelated { rho } => DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho }),
        }
    }
}

/// A selection procedure. `d = None` expands to every `d` of the experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    KnockoffPlus,
    Mirror { d: Option<usize> },
    Max { d: Option<usize> },
    Fixed { d: Option<usize>, c: f64, lambda: f64 },
    MultiKnockoff { d: Option<usize> },
    MultiKnockoffSelect,
}

impl Method {
    /// Knockoff count fixed by the method, if any.
    pub fn d(&self) -> Option<usize> {
        match *self {
            Method::KnockoffPlus => Some(1),
            Method::Mirror { d } | Method::Max { d } | Method::Fixed { d, .. } | Method::MultiKnockoff { d } => d,
            Method::MultiKnockoffSelect => None,
        }
    }

    /// The method pinned to `d` knockoffs; no-op for `knockoff+` and
    /// `multi-knockoff-select`.
    pub fn with_d(self, d: usize) -> Self {
        match self {
            Method::Mirror { .. } => Method::Mirror { d: Some(d) },
            Method::Max { .. } => Method::Max { d: Some(d) },
            Method::Fixed { c, lambda, .. } => Method::Fixed { d: Some(d), c, lambda },
            Method::MultiKnockoff { .. } => Method::MultiKnockoff { d: Some(d) },
            other => other,
        }
    }

    /// Fixed-parameter tuning, if this method has one.
    pub fn params(&self) -> Option<Result<TuningParams>> {
        match *self {
            Method::KnockoffPlus => Some(TuningParams::mirror(1)),
            Method::Mirror { d: Some(d) } => Some(TuningParams::mirror(d)),
            Method::Max { d: Some(d) } => Some(TuningParams::max(d)),
            Method::Fixed { d: Some(d), c, lambda } => Some(TuningParams::from_fractions(d, c, lambda)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = |d: &Option<usize>| d.map(|d| format!("@{d}")).unwrap_or_default();
        match self {
            Method::KnockoffPlus => write!(f, "knockoff+"),
            Method::Mirror { d } => write!(f, "mirror{}", suffix(d)),
            Method::Max { d } => write!(f, "max{}", suffix(d)),
            Method::Fixed { d, c, lambda } => write!(f, "fixed:{c},{lambda}{}", suffix(d)),
            Method::MultiKnockoff { d } => write!(f, "multi-knockoff{}", suffix(d)),
            Method::MultiKnockoffSelect => write!(f, "multi-knockoff-select"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `knockoff+`, `mirror[@d]`, `max[@d]`, `fixed:c,lambda[@d]`,
    /// `multi-knockoff[@d]`, `multi-knockoff-select`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("cannot parse method {s:?}"));
        let (head, d) = match s.rsplit_once('@') {
            Some((h, d)) => (h, Some(d.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        if d == Some(0) {
            return Err(bad());
        }
        Ok(match head {
            "knockoff+" if d.is_none() => Method::KnockoffPlus,
            "mirror" => Method::Mirror { d },
            "max" => Method::Max { d },
            "multi-knockoff" => Method::MultiKnockoff { d },
            "multi-knockoff-select" if d.is_none() => Method::MultiKnockoffSelect,
            _ => {
                let pair = head.strip_prefix("fixed:").ok_or_else(bad)?;
                let (c, lambda) = pair.split_once(',').ok_or_else(bad)?;
                let c: f64 = c.trim().parse().map_err(|_| bad())?;
                let lambda: f64 = lambda.trim().parse().map_err(|_| bad())?;
                Method::Fixed { d, c, lambda }
            }
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn one() -> usize {
    1
}
fn default_partition() -> PartitionMethod {
    PartitionMethod::Clustered
}
fn default_methods() -> Vec<Method> {
    vec![Method::Mirror { d: None }]
}
fn default_replicates() -> usize {
    100
}
fn default_mb() -> usize {
    32
}
fn default_multiplier() -> usize {
    DEFAULT_NLAMBDA_MULTIPLIER
}
fn default_ratio() -> f64 {
    DEFAULT_GRID_RATIO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub amplitude: f64,
    #[serde(default)]
    pub covariance: Covariance,
    pub d_list: Vec<usize>,
    #[serde(default = "one")]
    pub batches: usize,
    #[serde(default = "default_partition")]
    pub partition: PartitionMethod,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_mb")]
    pub m_b: usize,
    #[serde(default = "default_multiplier")]
    pub nlambda_multiplier: usize,
    #[serde(default = "default_ratio")]
    pub grid_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep, per fixed-parameter method, the labels of true nulls in `W`
    /// order for the null-win diagnostic.
    #[serde(default)]
    pub diagnostics: bool,
}

impl ExperimentConfig {
    /// Config with defaults for everything but the problem size.
    pub fn new(n: usize, p: usize, k: usize, amplitude: f64, d_list: Vec<usize>) -> Self {
        ExperimentConfig {
            n,
            p,
            k,
            amplitude,
            covariance: Covariance::default(),
            d_list,
            batches: 1,
            partition: default_partition(),
            methods: default_methods(),
            alphas: default_alphas(),
            replicates: default_replicates(),
            m_b: default_mb(),
            nlambda_multiplier: default_multiplier(),
            grid_ratio: default_ratio(),
            seed: 0,
            diagnostics: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        if self.p == 0 || self.n == 0 {
            return fail("n and p must be positive".into());
        }
        if self.n < self.p {
            return fail(format!("n = {} must be at least p = {}", self.n, self.p));
        }
        if self.k > self.p {
            return fail(format!("k = {} exceeds p = {}", self.k, self.p));
        }
        if !self.amplitude.is_finite() {
            return fail("amplitude must be finite".into());
        }
        let rho = self.covariance.rho();
        if !(0.0..1.0).contains(&rho) {
            return fail(format!("rho must lie in [0, 1), got {rho}"));
        }
        if self.d_list.is_empty() || self.d_list.contains(&0) {
            return fail("d_list must be non-empty with every d >= 1".into());
        }
        if self.batches == 0 || self.batches > self.p {
            return fail(format!("batches must lie in 1..={}, got {}", self.p, self.batches));
        }
        if self.methods.is_empty() {
            return fail("no methods given".into());
        }
        if self.alphas.is_empty()
            || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0))
            || self.alphas.windows(2).any(|w| w[0] >= w[1])
        {
            return fail("alphas must be strictly increasing within (0, 1)".into());
        }
        if self.replicates == 0 || self.m_b == 0 || self.nlambda_multiplier == 0 {
            return fail("replicates, m_b and nlambda_multiplier must be positive".into());
        }
        GridSpec::new(2, self.grid_ratio)?;
        for m in self.resolved_methods()? {
            if let Some(p) = m.params() {
                p?;
            }
        }
        Ok(())
    }

    /// Methods with every `d` filled in, in config order.
    pub fn resolved_methods(&self) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for m in &self.methods {
            match m {
                Method::KnockoffPlus | Method::MultiKnockoffSelect => out.push(*m),
                _ => match m.d() {
                    Some(_) => out.push(*m),
                    None => out.extend(self.d_list.iter().map(|&d| m.with_d(d))),
                },
            }
        }
        let mut seen = BTreeSet::new();
        for m in &out {
            if !seen.insert(m.to_string()) {
                return Err(Error::Parameter(format!("method {m} listed twice")));
            }
        }
        Ok(out)
    }

    /// Every `d` for which knockoffs are needed.
    pub fn needed_d(&self) -> Result<BTreeSet<usize>> {
        let mut ds = BTreeSet::new();
        for m in self.resolved_methods()? {
            match m {
                Method::MultiKnockoffSelect => ds.extend(self.d_list.iter().copied()),
                other => {
                    ds.insert(other.d().expect("resolved"));
                }
            }
        }
        Ok(ds)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let d_max = self.needed_d()?.into_iter().max().unwrap_or(1);
        GridSpec::new(grid_count(self.nlambda_multiplier, d_max, self.p), self.grid_ratio)
    }
}

/// Coefficients and the set of true features.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: DVector<f64>,
    /// Indices with nonzero coefficient, ascending.
    pub support: Vec<usize>,
}

impl Truth {
    pub fn is_null(&self, i: usize) -> bool {
        self.support.binary_search(&i).is_err()
    }
}

/// Rows of `X` i.i.d. `N(0, Σ)`, columns normalized, `K` coefficients
/// `±A` on a uniform random support, `y = Xβ + ε` with standard normal noise.
pub fn generate_dataset<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<(DesignData, Truth)> {
    let (n, p) = (cfg.n, cfg.p);
    let rho = cfg.covariance.rho();
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Parameter(format!("rho must lie in [0, 1), got {rho}")));
    }
    if cfg.k > p {
        return Err(Error::Parameter(format!("k = {} exceeds p = {p}", cfg.k)));
    }
    let chol = cfg
        .covariance
        .matrix(p)
        .cholesky()
        .ok_or_else(|| Error::Parameter("covariance is not positive definite".into()))?;
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = z * chol.l().transpose();
    let data = DesignData::new(x, DVector::zeros(n))?;

    let mut support = sample(rng, p, cfg.k).into_vec();
    support.sort_unstable();
    let mut beta = DVector::zeros(p);
    for &i in &support {
        beta[i] = if rng.random_bool(0.5) { cfg.amplitude } else { -cfg.amplitude };
    }
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = data.x() * &beta + noise;
    Ok((data.with_response(y)?, Truth { beta, support }))
}

/// One method at one threshold in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: String,
    pub replicate: usize,
    pub alpha: f64,
    /// `ok`, or `failed:<stage>`.
    pub status: String,
    pub discoveries: usize,
    pub fdp: Option<f64>,
    /// `None` when there are no true features.
    pub power: Option<f64>,
    pub d: Option<usize>,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicateOutput {
    pub records: Vec<ExperimentRecord>,
    /// Per fixed-parameter method: original-win flags of the true nulls in
    /// `W` order. Filled only when diagnostics are enabled.
    pub null_wins: BTreeMap<String, Vec<bool>>,
}

/// A pipeline failure tagged with the stage it happened in.
#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: String,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = std::result::Result<T, StageError>;

fn tag(stage: impl Into<String>) -> impl FnOnce(Error) -> StageError {
    let stage = stage.into();
    move |error| StageError { stage, error }
}

/// Knockoffs, scoring plans and real-data score tables for several `d` on
/// one design.
#[derive(Debug, Clone)]
pub struct ScoredDesign {
    /// The design as given (not extended).
    pub data: DesignData,
    pub partition: BatchPartition,
    pub plans: BTreeMap<usize, StageResult<(ScoringPlan, ScoreTable)>>,
}

impl ScoredDesign {
    pub fn table(&self, d: usize) -> StageResult<&ScoreTable> {
        match self.plans.get(&d) {
            Some(Ok((_, t))) => Ok(t),
            Some(Err(e)) => Err(e.clone()),
            None => Err(StageError { stage: "score".into(), error: Error::Parameter(format!("no scores for d = {d}")) }),
        }
    }
}

/// Extend once for the largest `d` (smaller `d` use prefixes of that
/// extension), partition the features, then construct and score per `d`.
/// Failures of a single `d` are kept in its slot.
///
/// Seeds: extension `[DATA, 1]`, partition `[PARTITION]`, construction
/// `[CONSTRUCT, d]`, scoring `[SCORE, d]`, all under `base`.
pub fn score_design(
    data: &DesignData,
    needed: &BTreeSet<usize>,
    batches: usize,
    partition: PartitionMethod,
    grid: GridSpec,
    base: u64,
) -> StageResult<ScoredDesign> {
    let d_max = *needed.iter().max().ok_or_else(|| tag("extend")(Error::Parameter("no d given".into())))?;
    let extended = if data.n() < data.rows_for(d_max) {
        extend_design(data, d_max, None, &mut derived_rng(base, &[stream::DATA, 1])).map_err(tag("extend"))?
    } else {
        data.clone()
    };
    let method = if batches == 1 { PartitionMethod::Single } else { partition };
    let partition = BatchPartition::build(method, data.x(), batches, &mut derived_rng(base, &[stream::PARTITION]))
        .map_err(tag("partition"))?;

    let plans = needed
        .iter()
        .map(|&d| {
            let run = || -> StageResult<(ScoringPlan, ScoreTable)> {
                let design = extended.prefix(data.rows_for(d)).map_err(tag("extend"))?;
                let ks = construct_knockoffs(&design, d, &partition, &mut derived_rng(base, &[stream::CONSTRUCT, d as u64]))
                    .map_err(tag(format!("construct(d={d})")))?;
                let plan = ScoringPlan::new(&design, &ks).map_err(tag(format!("score(d={d})")))?;
                let table = plan
                    .score(design.y(), grid, &mut derived_rng(base, &[stream::SCORE, d as u64]))
                    .map_err(tag(format!("score(d={d})")))?;
                Ok((plan, table))
            };
            let result = run();
            if let Err(e) = &result {
                log::warn!("{e}");
            }
            (d, result)
        })
        .collect();
    Ok(ScoredDesign { data: data.clone(), partition, plans })
}

/// Draw one set of bootstrap samples for all `ds` (conjecture from the
/// largest `d`) and tune `(c, lambda)` per `d` at every threshold.
///
/// Seeds: conjecture `[CONJECTURE]`, bootstrap `[BOOTSTRAP]` under `base`.
pub fn tune_multi(
    scored: &ScoredDesign,
    ds: &BTreeSet<usize>,
    m_b: usize,
    alphas: &[f64],
    grid: GridSpec,
    base: u64,
) -> StageResult<BTreeMap<usize, Vec<Optimum>>> {
    let mut plans = Vec::new();
    for &d in ds {
        match scored.plans.get(&d) {
            Some(Ok((plan, _))) => plans.push((d, plan)),
            _ => return Err(scored.table(d).expect_err("missing plan")),
        }
    }
    let d_top = *ds.iter().max().ok_or_else(|| tag("optimize")(Error::Parameter("no d given".into())))?;
    let top_table = scored.table(d_top)?;
    let lambda0 = estimate_lambda0(top_table);
    let conj = build_conjecture(top_table, &lambda0, &mut derived_rng(base, &[stream::CONJECTURE]))
        .map_err(tag("conjecture"))?;
    let sigma = estimate_sigma(&scored.data).map_err(tag("bootstrap"))?;
    let samples = draw_bootstrap(&scored.data, &conj, &plans, sigma, m_b, grid, &mut derived_rng(base, &[stream::BOOTSTRAP]))
        .map_err(tag("bootstrap"))?;
    ds.iter()
        .map(|&d| Ok((d, optimize_c_lambda_many(&samples, d, alphas).map_err(tag("optimize"))?)))
        .collect()
}

/// For each threshold, the `d` whose optimum has the largest bootstrap
/// objective (ties to the smaller `d`).
pub fn best_d_per_alpha(optima: &BTreeMap<usize, Vec<Optimum>>, ds: &[usize]) -> Vec<(usize, Optimum)> {
    let mut sorted: Vec<usize> = ds.to_vec();
    sorted.sort_unstable();
    let n_alpha = optima.values().next().map_or(0, Vec::len);
    (0..n_alpha)
        .map(|a| {
            let mut best: Option<(usize, &Optimum)> = None;
            for &d in &sorted {
                let opt = &optima[&d][a];
                if best.is_none_or(|(_, b)| opt.best.total > b.best.total) {
                    best = Some((d, opt));
                }
            }
            let (d, opt) = best.expect("non-empty d list");
            (d, opt.clone())
        })
        .collect()
}

fn record(method: &str, replicate: usize, alpha: f64, truth: &Truth, found: Option<&[usize]>) -> ExperimentRecord {
    let k = truth.support.len();
    let (discoveries, fdp, power) = match found {
        Some(found) => {
            let false_hits = found.iter().filter(|&&i| truth.is_null(i)).count();
            let true_hits = found.len() - false_hits;
            let power = (k > 0).then(|| true_hits as f64 / k as f64);
            (found.len(), Some(false_hits as f64 / found.len().max(1) as f64), power)
        }
        None => (0, None, None),
    };
    ExperimentRecord {
        method: method.to_string(),
        replicate,
        alpha,
        status: "ok".into(),
        discoveries,
        fdp,
        power,
        d: None,
        c: None,
        lambda: None,
    }
}

fn failed(method: &str, replicate: usize, alphas: &[f64], stage: &str) -> Vec<ExperimentRecord> {
    alphas
        .iter()
        .map(|&alpha| ExperimentRecord {
            method: method.to_string(),
            replicate,
            alpha,
            status: format!("failed:{stage}"),
            discoveries: 0,
            fdp: None,
            power: None,
            d: None,
            c: None,
            lambda: None,
        })
        .collect()
}

fn with_params(mut r: ExperimentRecord, d: usize, params: &TuningParams) -> ExperimentRecord {
    r.d = Some(d);
    r.c = Some(params.c());
    r.lambda = Some(params.lambda());
    r
}

/// Run every method of `cfg` on one simulated dataset. Stage failures are
/// recorded per method rather than returned.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> Result<ReplicateOutput> {
    cfg.validate()?;
    let methods = cfg.resolved_methods()?;
    let needed = cfg.needed_d()?;
    let grid = cfg.grid_spec()?;
    let base = derive(cfg.seed, &[stream::REPLICATE, replicate as u64]);
    let alphas = &cfg.alphas;
    let mut out = ReplicateOutput::default();

    let prepared = generate_dataset(cfg, &mut derived_rng(base, &[stream::DATA]))
        .map_err(tag("data"))
        .and_then(|(data, truth)| {
            Ok((score_design(&data, &needed, cfg.batches, cfg.partition, grid, base)?, truth))
        });
    let (scored, truth) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("replicate {replicate}: {e}");
            for m in &methods {
                out.records.extend(failed(&m.to_string(), replicate, alphas, &e.stage));
            }
            return Ok(out);
        }
    };

    let multi_d: BTreeSet<usize> = methods
        .iter()
        .flat_map(|m| match m {
            Method::MultiKnockoff { d: Some(d) } => vec![*d],
            Method::MultiKnockoffSelect => cfg.d_list.clone(),
            _ => vec![],
        })
        .collect();
    let optima = if multi_d.is_empty() {
        Ok(BTreeMap::new())
    } else {
        tune_multi(&scored, &multi_d, cfg.m_b, alphas, grid, base)
    };
    if let Err(e) = &optima {
        log::warn!("replicate {replicate}: {e}");
    }

    for m in &methods {
        let name = m.to_string();
        let mut rng = derived_rng(base, &[stream::SELECT, label(&name)]);
        match *m {
            Method::KnockoffPlus => match scored.table(1) {
                Err(e) => out.records.extend(failed(&name, replicate, alphas, &e.stage)),
                Ok(table) => {
                    let z: Vec<f64> = (0..table.p()).map(|i| table.row(i)[0]).collect();
                    let zt: Vec<f64> = (0..table.p()).map(|i| table.row(i)[1]).collect();
                    let params = TuningParams::mirror(1)?;
                    for &alpha in alphas {
                        let mut r = derived_rng(base, &[stream::SELECT, label(&name)]);
                        let found = knockoff_plus_reference(&z, &zt, alpha, &mut r)?;
                        out.records.push(with_params(record(&name, replicate, alpha, &truth, Some(&found)), 1, &params));
                    }
                }
            },
            Method::Mirror { d: Some(d) } | Method::Max { d: Some(d) } | Method::Fixed { d: Some(d), .. } => {
                let params = m.params().expect("fixed method")?;
                match scored.table(d) {
                    Err(e) => out.records.extend(failed(&name, replicate, alphas, &e.stage)),
                    Ok(table) => {
                        let outcome = compete(table, &params, &mut rng)?;
                        for &alpha in alphas {
                            let sel = select_discoveries(&outcome, alpha);
                            out.records.push(with_params(
                                record(&name, replicate, alpha, &truth, Some(&sel.discoveries)),
                                d,
                                &params,
                            ));
                        }
                        if cfg.diagnostics {
                            let wins = outcome
                                .order
                                .iter()
                                .filter(|&&i| truth.is_null(i))
                                .map(|&i| outcome.labels[i] == 1)
                                .collect();
                            out.null_wins.insert(name.clone(), wins);
                        }
                    }
                }
            }
            Method::MultiKnockoff { d: Some(d) } => {
                let ds = [d];
                out.records.extend(multi_records(&name, replicate, &scored, &truth, &optima, &ds, alphas, base)?);
            }
            Method::MultiKnockoffSelect => {
                out.records.extend(multi_records(&name, replicate, &scored, &truth, &optima, &cfg.d_list, alphas, base)?);
            }
            _ => unreachable!("methods are resolved"),
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn multi_records(
    name: &str,
    replicate: usize,
    scored: &ScoredDesign,
    truth: &Truth,
    optima: &StageResult<BTreeMap<usize, Vec<Optimum>>>,
    ds: &[usize],
    alphas: &[f64],
    base: u64,
) -> Result<Vec<ExperimentRecord>> {
    let optima = match optima {
        Ok(o) => o,
        Err(e) => return Ok(failed(name, replicate, alphas, &e.stage)),
    };
    let mut records = Vec::with_capacity(alphas.len());
    for (a, ((d, opt), &alpha)) in best_d_per_alpha(optima, ds).into_iter().zip(alphas).enumerate() {
        let table = scored.table(d).expect("tuned d has scores");
        let mut rng = derived_rng(base, &[stream::SELECT, label(name), a as u64]);
        let outcome = compete(table, &opt.best.params, &mut rng)?;
        let sel = select_discoveries(&outcome, alpha);
        records.push(with_params(record(name, replicate, alpha, truth, Some(&sel.discoveries)), d, &opt.best.params));
    }
    Ok(records)
}

/// All replicates of an experiment, run in parallel. Output order is by
/// replicate regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateOutput>> {
    cfg.validate()?;
    (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect()
}

/// Mean and standard error of a sample.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub alpha: f64,
    pub replicates: usize,
    pub failed: usize,
    pub fdr: f64,
    pub fdr_se: f64,
    pub fdr_ratio: f64,
    pub power: Option<f64>,
    pub power_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDifference {
    pub method_a: String,
    pub method_b: String,
    pub alpha: f64,
    pub pairs: usize,
    /// Mean of `power(a) - power(b)` over replicates where both succeeded.
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curves {
    pub points: Vec<CurvePoint>,
    pub differences: Vec<PowerDifference>,
}

impl Curves {
    pub fn point(&self, method: &str, alpha: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.method == method && (p.alpha - alpha).abs() < 1e-12)
    }
}

/// Per-(method, alpha) empirical FDR and power with standard errors, plus
/// paired power differences between every two methods. Failed records are
/// counted and left out.
pub fn aggregate(records: &[ExperimentRecord]) -> Curves {
    let mut methods: Vec<String> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        if !alphas.iter().any(|a| (a - r.alpha).abs() < 1e-12) {
            alphas.push(r.alpha);
        }
    }
    alphas.sort_by(f64::total_cmp);
    let mut groups: BTreeMap<(usize, usize), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        let m = methods.iter().position(|m| *m == r.method).expect("collected");
        let a = alphas.iter().position(|a| (a - r.alpha).abs() < 1e-12).expect("collected");
        groups.entry((m, a)).or_default().push(r);
    }

    let mut curves = Curves::default();
    for ((m, a), group) in &groups {
        let ok: Vec<&&ExperimentRecord> = group.iter().filter(|r| r.is_ok()).collect();
        if ok.is_empty() {
            continue;
        }
        let fdp: Vec<f64> = ok.iter().filter_map(|r| r.fdp).collect();
        let power: Vec<f64> = ok.iter().filter_map(|r| r.power).collect();
        let (fdr, fdr_se) = mean_se(&fdp);
        let (power, power_se) = if power.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_se(&power);
            (Some(m), Some(s))
        };
        curves.points.push(CurvePoint {
            method: methods[*m].clone(),
            alpha: alphas[*a],
            replicates: ok.len(),
            failed: group.len() - ok.len(),
            fdr,
            fdr_se,
            fdr_ratio: fdr / alphas[*a],
            power,
            power_se,
        });
    }
    let powers = |m: usize, a: usize| -> BTreeMap<usize, f64> {
        groups
            .get(&(m, a))
            .map(|g| g.iter().filter(|r| r.is_ok()).filter_map(|r| r.power.map(|p| (r.replicate, p))).collect())
            .unwrap_or_default()
    };
    for ma in 0..methods.len() {
        for mb in ma + 1..methods.len() {
            for a in 0..alphas.len() {
                let pb = powers(mb, a);
                let diffs: Vec<f64> =
                    powers(ma, a).iter().filter_map(|(rep, p)| Some(p - pb.get(rep)?)).collect();
                if diffs.is_empty() {
                    continue;
                }
                let (mean, se) = mean_se(&diffs);
                curves.differences.push(PowerDifference {
                    method_a: methods[ma].clone(),
                    method_b: methods[mb].clone(),
                    alpha: alphas[a],
                    pairs: diffs.len(),
                    mean,
                    se,
                });
            }
        }
    }
    curves
}

/// 0.975 quantile of the standard normal.
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullWinPoint {
    pub i0: usize,
    pub wins: usize,
    pub total: usize,
    pub fraction: f64,
    /// Binomial mean `c` and its standard error at this pooled count.
    pub mean: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Pooled fraction of original wins among the top-`i0` true nulls (in `W`
/// order) for every `i0`, with the normal-approximation 2.5%/97.5% band
/// around the binomial mean `c`.
pub fn null_win_diagnostic(sequences: &[Vec<bool>], c: f64) -> Vec<NullWinPoint> {
    let longest = sequences.iter().map(Vec::len).max().unwrap_or(0);
    let (mut wins, mut total) = (0usize, 0usize);
    (1..=longest)
        .map(|i0| {
            for s in sequences {
                if let Some(&w) = s.get(i0 - 1) {
                    total += 1;
                    wins += w as usize;
                }
            }
            let se = (c * (1.0 - c) / total as f64).sqrt();
            NullWinPoint {
                i0,
                wins,
                total,
                fraction: wins as f64 / total as f64,
                mean: c,
                se,
                lower: c - Z_975 * se,
                upper: c + Z_975 * se,
            }
        })
        .collect()
}

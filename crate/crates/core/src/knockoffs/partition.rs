use std::fmt;
use std::str::FromStr;

use kodama::{linkage, Method};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean batch size below which clustered batching is known to bias the
/// knockoff competition.
const MIN_MEAN_BATCH: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMethod {
    Clustered,
    Uniform,
    Single,
}

impl fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionMethod::Clustered => "clustered",
            PartitionMethod::Uniform => "uniform",
            PartitionMethod::Single => "single",
        })
    }
}

impl FromStr for PartitionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clustered" => Ok(PartitionMethod::Clustered),
            "uniform" => Ok(PartitionMethod::Uniform),
            "single" => Ok(PartitionMethod::Single),
            other => Err(Error::Parameter(format!(
                "unknown partition method {other:?} (expected clustered, uniform or single)"
            ))),
        }
    }
}

/// Disjoint cover of `0..p` by non-empty batches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPartition {
    batches: Vec<Vec<usize>>,
    method: PartitionMethod,
}

impl BatchPartition {
    /// Validates and canonicalizes: each batch sorted, batches ordered by their
    /// smallest feature.
    pub fn new(mut batches: Vec<Vec<usize>>, method: PartitionMethod) -> Result<Self> {
        let p: usize = batches.iter().map(Vec::len).sum();
        if p == 0 {
            return Err(Error::Parameter("partition must cover at least one feature".into()));
        }
        let mut seen = vec![false; p];
        for batch in &mut batches {
            if batch.is_empty() {
                return Err(Error::Parameter("partition contains an empty batch".into()));
            }
            batch.sort_unstable();
            for &i in batch.iter() {
                if i >= p || seen[i] {
                    return Err(Error::Parameter(format!(
                        "batches must be disjoint and cover 0..{p} (offending index {i})"
                    )));
                }
                seen[i] = true;
            }
        }
        batches.sort_by_key(|b| b[0]);
        if method == PartitionMethod::Clustered {
            let mean = p as f64 / batches.len() as f64;
            if mean < MIN_MEAN_BATCH {
                log::warn!("mean batch size {mean:.2} is below {MIN_MEAN_BATCH}; batched knockoffs may be liberal");
            }
        }
        Ok(BatchPartition { batches, method })
    }

    pub fn single(p: usize) -> Self {
        BatchPartition { batches: vec![(0..p).collect()], method: PartitionMethod::Single }
    }

    /// Random assignment of features to `b` batches of near-equal size.
    pub fn uniform<R: Rng + ?Sized>(p: usize, b: usize, rng: &mut R) -> Result<Self> {
        check_count(p, b)?;
        let mut idx: Vec<usize> = (0..p).collect();
        idx.shuffle(rng);
        let batches = (0..b)
            .map(|j| idx[j * p / b..(j + 1) * p / b].to_vec())
            .collect();
        BatchPartition::new(batches, PartitionMethod::Uniform)
    }

    /// Dispatch on `method`; `Single` ignores `b`.
    pub fn build<R: Rng + ?Sized>(
        method: PartitionMethod,
        x: &DMatrix<f64>,
        b: usize,
        rng: &mut R,
    ) -> Result<Self> {
        match method {
            PartitionMethod::Single => Ok(BatchPartition::single(x.ncols())),
            PartitionMethod::Uniform => BatchPartition::uniform(x.ncols(), b, rng),
            PartitionMethod::Clustered => cluster_batches(x, b),
        }
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn method(&self) -> PartitionMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn p(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

fn check_count(p: usize, b: usize) -> Result<()> {
    if b == 0 || b > p {
        return Err(Error::Parameter(format!("number of batches must be in 1..={p}, got {b}")));
    }
    Ok(())
}

/// UPGMA (average linkage, Euclidean distance between columns) cut into `b`
/// clusters from the root down.
pub fn cluster_batches(x: &DMatrix<f64>, b: usize) -> Result<BatchPartition> {
    let p = x.ncols();
    check_count(p, b)?;
    if b == 1 {
        return BatchPartition::new(vec![(0..p).collect()], PartitionMethod::Clustered);
    }
    let mut condensed = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            condensed.push((x.column(i) - x.column(j)).norm());
        }
    }
    let dend = linkage(&mut condensed, p, Method::Average);

    // Replaying all but the last b-1 merges leaves exactly b clusters.
    let mut parent: Vec<usize> = (0..2 * p - 1).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (k, step) in dend.steps().iter().enumerate().take(p - b) {
        let node = p + k;
        let a = find(&mut parent, step.cluster1);
        let c = find(&mut parent, step.cluster2);
        parent[a] = node;
        parent[c] = node;
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..p {
        let root = find(&mut parent, i);
        by_root.entry(root).or_default().push(i);
    }
    BatchPartition::new(by_root.into_values().collect(), PartitionMethod::Clustered)
}

use std::path::PathBuf;

use multiko_core::knockoffs::{
    construct_knockoffs, extend_design, required_rows, verify_gram, BatchPartition, DesignData, PartitionMethod,
};
use multiko_core::seed::stream;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::Run;
use crate::error::{CliError, CliResult};
use crate::io::{digest, matrix_csv, read_matrix, read_vector, vector_csv};

pub const KNOCKOFFS_CSV: &str = "knockoffs.csv";
pub const KNOCKOFFS_JSON: &str = "knockoffs.json";
pub const RESPONSE_CSV: &str = "response.csv";

const GRAM_TOL: f64 = 1e-6;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Design matrix CSV, n rows by p columns.
    #[arg(long)]
    pub x: PathBuf,
    /// Response CSV (one column). Required when n < (d+1)p, since the
    /// response is then extended with noise.
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    /// clustered, uniform or single.
    #[arg(long, default_value = "clustered")]
    pub partition: PartitionMethod,
    /// Known noise level for the row extension instead of the estimate.
    #[arg(long)]
    pub sigma: Option<f64>,
}

/// Everything `score` needs to rebuild and check a knockoff set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnockoffMeta {
    pub d: usize,
    pub p: usize,
    /// Rows of the knockoffs, after any extension.
    pub n: usize,
    pub n_original: usize,
    pub partition: BatchPartition,
    pub per_batch_s0: Vec<f64>,
    pub sigma_hat: Option<f64>,
    /// SHA-256 over the bits of the knockoff matrix.
    pub fingerprint: String,
    /// SHA-256 of `knockoffs.csv` and of the input design file.
    pub knockoffs_sha256: String,
    pub x_sha256: String,
    pub gram_max_deviation: f64,
    pub original_discrepancy: f64,
}

pub fn knockoff_header(p: usize, d: usize) -> Vec<String> {
    (1..=d).flat_map(|j| (0..p).map(move |i| format!("f{i}_k{j}"))).collect()
}

pub fn run(a: &Args, run: &mut Run) -> CliResult<()> {
    run.set_config(serde_json::json!({
        "x": a.x, "y": a.y, "d": a.d, "batches": a.batches,
        "partition": a.partition, "sigma": a.sigma,
    }));
    let (x, x_sha) = read_matrix(&a.x)?;
    run.input(&a.x, &x_sha);
    let y = match &a.y {
        Some(path) => {
            let (y, sha) = read_vector(path)?;
            run.input(path, &sha);
            Some(y)
        }
        None => None,
    };
    if a.d == 0 {
        return Err(CliError::Config("d must be >= 1".into()));
    }
    let (n, p) = x.shape();
    let needs_extension = n < required_rows(p, a.d);
    if needs_extension && y.is_none() {
        return Err(CliError::Config(format!(
            "--y is required: n = {n} < (d+1)p = {}, so the response must be extended",
            required_rows(p, a.d)
        )));
    }
    let data = DesignData::new(x, y.clone().unwrap_or_else(|| DVector::zeros(n)))?;

    let method = if a.batches == 1 { PartitionMethod::Single } else { a.partition };
    let partition = BatchPartition::build(method, data.x(), a.batches, &mut run.rng("partition", &[stream::PARTITION]))?;
    let design = if needs_extension {
        extend_design(&data, a.d, a.sigma, &mut run.rng("extend", &[stream::DATA, 1]))?
    } else {
        data
    };
    let ks = construct_knockoffs(&design, a.d, &partition, &mut run.rng("construct", &[stream::CONSTRUCT, a.d as u64]))?;
    let report = verify_gram(&design, &ks, GRAM_TOL);
    if !report.pass {
        return Err(CliError::Numerical(format!(
            "knockoff Gram deviates from its target by {:e} (> {GRAM_TOL:e})",
            report.max_deviation()
        )));
    }

    let csv = matrix_csv(Some(&knockoff_header(p, a.d)), ks.knockoffs());
    let meta = KnockoffMeta {
        d: a.d,
        p,
        n: design.n(),
        n_original: design.n_original(),
        partition: ks.partition().clone(),
        per_batch_s0: ks.per_batch_s0().to_vec(),
        sigma_hat: ks.sigma_hat(),
        fingerprint: ks.fingerprint().to_string(),
        knockoffs_sha256: digest(csv.as_bytes()),
        x_sha256: x_sha,
        gram_max_deviation: report.max_deviation(),
        original_discrepancy: ks.original_discrepancy(),
    };
    run.outputs.add(KNOCKOFFS_CSV, csv);
    if y.is_some() {
        run.outputs.add(RESPONSE_CSV, vector_csv("y", design.y()));
    }
    let json = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Io(e.to_string()))?;
    run.outputs.add(KNOCKOFFS_JSON, json + "\n");
    println!(
        "d={} p={} n={} batches={} min_s0={:.6}",
        a.d,
        p,
        design.n(),
        partition.len(),
        ks.per_batch_s0().iter().copied().fold(f64::INFINITY, f64::min)
    );
    Ok(())
}

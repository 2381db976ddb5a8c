use std::fs;
use std::path::PathBuf;

use multiko_core::knockoffs::{DesignData, KnockoffSet};
use multiko_core::lasso::{grid_count, GridSpec, ScoreTable, ScoringPlan, DEFAULT_GRID_RATIO, DEFAULT_NLAMBDA_MULTIPLIER};
use multiko_core::seed::stream;
use nalgebra::DVector;

use super::construct::{KnockoffMeta, KNOCKOFFS_CSV, KNOCKOFFS_JSON, RESPONSE_CSV};
use super::Run;
use crate::error::{CliError, CliResult};
use crate::io::{digest, read_bytes, read_matrix, read_table, read_vector};

pub const SCORES_CSV: &str = "scores.csv";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// The design matrix the knockoffs were built from.
    #[arg(long)]
    pub x: PathBuf,
    /// Output directory of `construct`.
    #[arg(long)]
    pub knockoffs: PathBuf,
    /// Response with one entry per knockoff row; defaults to the response
    /// written by `construct`.
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NLAMBDA_MULTIPLIER)]
    pub nlambda_multiplier: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_RATIO)]
    pub grid_ratio: f64,
    /// Largest d in the study, which sets the grid size (default: this d).
    #[arg(long)]
    pub d_max: Option<usize>,
}

pub fn scores_csv(table: &ScoreTable) -> String {
    let mut out = String::from("feature_id");
    for j in 0..table.d1() {
        out.push_str(&format!(",z{j}"));
    }
    out.push_str(",rank\n");
    for i in 0..table.p() {
        out.push_str(&i.to_string());
        for z in table.row(i) {
            out.push(',');
            out.push_str(&z.to_string());
        }
        out.push_str(&format!(",{}\n", table.rank(i)));
    }
    out
}

pub fn run(a: &Args, run: &mut Run) -> CliResult<()> {
    run.set_config(serde_json::json!({
        "x": a.x, "knockoffs": a.knockoffs, "y": a.y,
        "nlambda_multiplier": a.nlambda_multiplier, "grid_ratio": a.grid_ratio, "d_max": a.d_max,
    }));
    let meta_path = a.knockoffs.join(KNOCKOFFS_JSON);
    let meta_bytes = read_bytes(&meta_path)?;
    run.input(&meta_path, &digest(&meta_bytes));
    let meta: KnockoffMeta = serde_json::from_slice(&meta_bytes).map_err(|e| CliError::io(meta_path.display(), e))?;

    let (x, x_sha) = read_matrix(&a.x)?;
    run.input(&a.x, &x_sha);
    if x_sha != meta.x_sha256 {
        return Err(CliError::Io(format!("{} is not the design these knockoffs were built from", a.x.display())));
    }
    let k_path = a.knockoffs.join(KNOCKOFFS_CSV);
    let (k_table, k_sha) = read_table(&k_path)?;
    run.input(&k_path, &k_sha);
    if k_sha != meta.knockoffs_sha256 {
        return Err(CliError::Io(format!("{} was modified after construction", k_path.display())));
    }
    let ks = KnockoffSet::from_parts(
        meta.d,
        k_table.to_matrix(),
        meta.partition.clone(),
        meta.per_batch_s0.clone(),
        meta.n - meta.n_original,
        meta.sigma_hat,
    )?;
    if ks.fingerprint() != meta.fingerprint || ks.n() != meta.n {
        return Err(CliError::Io(format!("{} does not match its metadata", k_path.display())));
    }

    let y_path = match &a.y {
        Some(p) => p.clone(),
        None => {
            let p = a.knockoffs.join(RESPONSE_CSV);
            if fs::metadata(&p).is_err() {
                return Err(CliError::Io(format!("no --y given and {} does not exist", p.display())));
            }
            p
        }
    };
    let (y, y_sha) = read_vector(&y_path)?;
    run.input(&y_path, &y_sha);
    if y.len() != meta.n {
        return Err(CliError::Config(format!("response has {} entries, the knockoffs {} rows", y.len(), meta.n)));
    }

    // Same column normalization as at construction, then the zero rows of
    // the extension.
    let n0 = x.nrows();
    if n0 != meta.n_original || x.ncols() != meta.p {
        return Err(CliError::Config("design shape differs from the knockoff metadata".into()));
    }
    let data = DesignData::new(x, DVector::zeros(n0))?;
    let x = data.x().clone().resize_vertically(meta.n, 0.0);
    let plan = ScoringPlan::from_matrices(&x, &ks)?;
    let d_max = a.d_max.unwrap_or(meta.d);
    if d_max < meta.d {
        return Err(CliError::Config(format!("--d-max {d_max} is below d = {}", meta.d)));
    }
    let grid = GridSpec::new(grid_count(a.nlambda_multiplier, d_max, meta.p), a.grid_ratio)?;
    let table = plan.score(&y, grid, &mut run.rng("score", &[stream::SCORE, meta.d as u64]))?;
    run.outputs.add(SCORES_CSV, scores_csv(&table));
    println!("scored p={} d={} grid={}", meta.p, meta.d, grid.count);
    Ok(())
}

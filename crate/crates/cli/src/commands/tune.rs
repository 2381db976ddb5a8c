use std::collections::BTreeSet;
use std::path::PathBuf;

use multiko_core::competition::{compete, select_discoveries};
use multiko_core::knockoffs::{DesignData, PartitionMethod};
use multiko_core::lasso::{grid_count, GridSpec, DEFAULT_GRID_RATIO, DEFAULT_NLAMBDA_MULTIPLIER};
use multiko_core::seed::{derive, label, stream};
use multiko_core::simulate::{best_d_per_alpha, score_design, tune_multi, Method};
use serde::Serialize;

use super::{check_alphas, parse_list, Run};
use crate::error::{CliError, CliResult};
use crate::io::{read_matrix, read_vector, rows_csv};

pub const TUNE_GRID_CSV: &str = "tune_grid.csv";
const DISCOVERY_HEADER: &str = "d,alpha,feature_id,W,label,order_index";

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    /// Comma-separated knockoff counts; more than one selects d as well.
    #[arg(long, default_value = "1")]
    pub d_list: String,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    #[arg(long, default_value = "clustered")]
    pub partition: PartitionMethod,
    /// Bootstrap samples.
    #[arg(long, default_value_t = 32)]
    pub m_b: usize,
    /// Comma-separated FDR thresholds.
    #[arg(long, default_value = "0.1")]
    pub alpha: String,
    #[arg(long, default_value_t = DEFAULT_NLAMBDA_MULTIPLIER)]
    pub nlambda_multiplier: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_RATIO)]
    pub grid_ratio: f64,
}

#[derive(Debug, Serialize)]
struct GridRow {
    alpha: f64,
    d: usize,
    i_c: usize,
    i_lambda: usize,
    c: f64,
    lambda: f64,
    total: usize,
    mean: f64,
    best: bool,
}

#[derive(Debug, Serialize)]
struct TunedDiscovery {
    d: usize,
    alpha: f64,
    feature_id: usize,
    #[serde(rename = "W")]
    w: f64,
    label: i8,
    order_index: usize,
}

#[derive(Debug, Serialize)]
struct AlphaSummary {
    alpha: f64,
    d: usize,
    i_c: usize,
    i_lambda: usize,
    bootstrap_total: usize,
    i_star: usize,
    discoveries: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct Summary {
    method: String,
    m_b: usize,
    selections: Vec<AlphaSummary>,
}

pub fn run(a: &Args, run: &mut Run) -> CliResult<()> {
    run.set_config(serde_json::json!({
        "x": a.x, "y": a.y, "d_list": a.d_list, "batches": a.batches, "partition": a.partition,
        "m_b": a.m_b, "alpha": a.alpha, "nlambda_multiplier": a.nlambda_multiplier, "grid_ratio": a.grid_ratio,
    }));
    let alphas: Vec<f64> = parse_list(&a.alpha, "alpha")?;
    check_alphas(&alphas)?;
    let ds: Vec<usize> = parse_list(&a.d_list, "d")?;
    let needed: BTreeSet<usize> = ds.iter().copied().collect();
    if needed.is_empty() || needed.contains(&0) || needed.len() != ds.len() {
        return Err(CliError::Config(format!("d list must hold distinct values >= 1, got {}", a.d_list)));
    }
    if a.m_b == 0 {
        return Err(CliError::Config("m_b must be >= 1".into()));
    }
    let (x, x_sha) = read_matrix(&a.x)?;
    run.input(&a.x, &x_sha);
    let (y, y_sha) = read_vector(&a.y)?;
    run.input(&a.y, &y_sha);
    let data = DesignData::new(x, y)?;
    let d_max = *needed.iter().max().expect("non-empty");
    let grid = GridSpec::new(grid_count(a.nlambda_multiplier, d_max, data.p()), a.grid_ratio)?;

    let seed = run.seed;
    for (stage, path) in [
        ("extend", vec![stream::DATA, 1]),
        ("partition", vec![stream::PARTITION]),
        ("conjecture", vec![stream::CONJECTURE]),
        ("bootstrap", vec![stream::BOOTSTRAP]),
    ] {
        run.manifest.seed(stage, derive(seed, &path));
    }
    for &d in &needed {
        run.manifest.seed(&format!("construct(d={d})"), derive(seed, &[stream::CONSTRUCT, d as u64]));
        run.manifest.seed(&format!("score(d={d})"), derive(seed, &[stream::SCORE, d as u64]));
    }
    let scored = score_design(&data, &needed, a.batches, a.partition, grid, seed)?;
    for &d in &needed {
        scored.table(d)?;
    }
    let optima = tune_multi(&scored, &needed, a.m_b, &alphas, grid, seed)?;

    let name = if ds.len() == 1 { Method::MultiKnockoff { d: Some(ds[0]) } } else { Method::MultiKnockoffSelect }.to_string();
    let mut grid_rows = Vec::new();
    for (&d, per_alpha) in &optima {
        for opt in per_alpha {
            for s in &opt.grid {
                grid_rows.push(GridRow {
                    alpha: opt.alpha,
                    d,
                    i_c: s.params.i_c,
                    i_lambda: s.params.i_lambda,
                    c: s.params.c(),
                    lambda: s.params.lambda(),
                    total: s.total,
                    mean: s.mean,
                    best: s.params == opt.best.params,
                });
            }
        }
    }

    let mut rows = Vec::new();
    let mut selections = Vec::new();
    for (k, ((d, opt), &alpha)) in best_d_per_alpha(&optima, &ds).into_iter().zip(&alphas).enumerate() {
        let table = scored.table(d)?;
        let mut rng = run.rng(&format!("select(alpha={alpha})"), &[stream::SELECT, label(&name), k as u64]);
        let outcome = compete(table, &opt.best.params, &mut rng)?;
        let sel = select_discoveries(&outcome, alpha);
        let mut position = vec![0; table.p()];
        for (pos, &i) in outcome.order.iter().enumerate() {
            position[i] = pos;
        }
        for &i in &sel.discoveries {
            rows.push(TunedDiscovery {
                d,
                alpha,
                feature_id: i,
                w: outcome.w[i],
                label: outcome.labels[i],
                order_index: position[i],
            });
        }
        println!(
            "alpha={alpha} d={d} c={:.4} lambda={:.4} i_star={} discoveries={}",
            opt.best.params.c(),
            opt.best.params.lambda(),
            sel.i_star,
            sel.discoveries.len()
        );
        selections.push(AlphaSummary {
            alpha,
            d,
            i_c: opt.best.params.i_c,
            i_lambda: opt.best.params.i_lambda,
            bootstrap_total: opt.best.total,
            i_star: sel.i_star,
            discoveries: sel.discoveries,
        });
    }

    run.outputs.add(TUNE_GRID_CSV, rows_csv(&grid_rows, "alpha,d,i_c,i_lambda,c,lambda,total,mean,best")?);
    run.outputs.add(super::select::DISCOVERIES_CSV, rows_csv(&rows, DISCOVERY_HEADER)?);
    let summary = Summary { method: name, m_b: a.m_b, selections };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    run.outputs.add(super::select::SUMMARY_JSON, json + "\n");
    Ok(())
}

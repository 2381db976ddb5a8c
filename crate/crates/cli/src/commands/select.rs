use std::path::{Path, PathBuf};

use multiko_core::competition::{compete, knockoff_plus_reference, select_discoveries};
use multiko_core::lasso::ScoreTable;
use multiko_core::seed::{label, stream};
use multiko_core::simulate::Method;
use serde::Serialize;

use super::{check_alphas, parse_list, DiscoveryRow, Run, DISCOVERY_HEADER};
use crate::error::{CliError, CliResult};
use crate::io::{read_table, rows_csv};

pub const DISCOVERIES_CSV: &str = "discoveries.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output of `score`: feature_id, z0 (original), z1..zd, rank.
    #[arg(long)]
    pub scores: PathBuf,
    /// mirror, max, fixed:c,lambda or knockoff+ (d = 1 only).
    #[arg(long, default_value = "mirror")]
    pub method: String,
    /// Comma-separated FDR thresholds.
    #[arg(long, default_value = "0.1")]
    pub alpha: String,
}

#[derive(Debug, Serialize)]
struct AlphaSummary {
    alpha: f64,
    i_star: Option<usize>,
    discoveries: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct Summary {
    method: String,
    d: usize,
    i_c: usize,
    i_lambda: usize,
    selections: Vec<AlphaSummary>,
}

/// Scores and original ranks from a scores CSV.
pub fn read_scores(path: &Path) -> CliResult<(usize, Vec<f64>, Vec<usize>, String)> {
    let (t, sha) = read_table(path)?;
    let cols = t.ncols();
    if cols < 4 {
        return Err(CliError::Io(format!("{}: need feature_id, z0, z1.., rank columns", path.display())));
    }
    let d = cols - 3;
    let mut scores = Vec::with_capacity(t.rows.len() * (d + 1));
    let mut ranks = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        if row.len() != cols {
            return Err(CliError::Io(format!("{}: ragged row {}", path.display(), i + 1)));
        }
        if row[0] != i as f64 {
            return Err(CliError::Io(format!("{}: row {} has feature_id {}, expected {i}", path.display(), i + 1, row[0])));
        }
        let rank = row[cols - 1];
        if rank.fract() != 0.0 || rank < 1.0 {
            return Err(CliError::Io(format!("{}: row {}: bad rank {rank}", path.display(), i + 1)));
        }
        scores.extend_from_slice(&row[1..cols - 1]);
        ranks.push(rank as usize);
    }
    Ok((d, scores, ranks, sha))
}

pub fn run(a: &Args, run: &mut Run) -> CliResult<()> {
    run.set_config(serde_json::json!({ "scores": a.scores, "method": a.method, "alpha": a.alpha }));
    let alphas: Vec<f64> = parse_list(&a.alpha, "alpha")?;
    check_alphas(&alphas)?;
    let method: Method = a.method.parse()?;
    let (d, scores, ranks, sha) = read_scores(&a.scores)?;
    run.input(&a.scores, &sha);
    if method.d().is_some_and(|md| md != d) {
        return Err(CliError::Config(format!("method {method} does not fit scores with d = {d}")));
    }
    let method = method.with_d(d);
    let name = method.to_string();
    let params = match method.params() {
        Some(p) => p?,
        None => return Err(CliError::Config(format!("{name} needs bootstrap tuning; use `tune`"))),
    };
    let table = ScoreTable::from_ranks(d, scores, &ranks, &mut run.rng("ties", &[stream::SELECT, 0]))?;

    let mut rows = Vec::new();
    let mut selections = Vec::new();
    if method == Method::KnockoffPlus {
        let z: Vec<f64> = (0..table.p()).map(|i| table.row(i)[0]).collect();
        let zt: Vec<f64> = (0..table.p()).map(|i| table.row(i)[1]).collect();
        for &alpha in &alphas {
            let found = knockoff_plus_reference(&z, &zt, alpha, &mut run.rng("select", &[stream::SELECT, label(&name)]))?;
            for &i in &found {
                let (w, l) = match z[i].total_cmp(&zt[i]) {
                    std::cmp::Ordering::Greater => (z[i], 1),
                    std::cmp::Ordering::Less => (zt[i], -1),
                    std::cmp::Ordering::Equal => (z[i], 0),
                };
                rows.push(DiscoveryRow { alpha, feature_id: i, w, label: l, order_index: None });
            }
            println!("alpha={alpha} discoveries={}", found.len());
            selections.push(AlphaSummary { alpha, i_star: None, discoveries: found });
        }
    } else {
        let outcome = compete(&table, &params, &mut run.rng("select", &[stream::SELECT, label(&name)]))?;
        let mut position = vec![0; table.p()];
        for (k, &i) in outcome.order.iter().enumerate() {
            position[i] = k;
        }
        for &alpha in &alphas {
            let sel = select_discoveries(&outcome, alpha);
            for &i in &sel.discoveries {
                rows.push(DiscoveryRow {
                    alpha,
                    feature_id: i,
                    w: outcome.w[i],
                    label: outcome.labels[i],
                    order_index: Some(position[i]),
                });
            }
            println!("alpha={alpha} i_star={} discoveries={}", sel.i_star, sel.discoveries.len());
            selections.push(AlphaSummary { alpha, i_star: Some(sel.i_star), discoveries: sel.discoveries });
        }
    }
    run.outputs.add(DISCOVERIES_CSV, rows_csv(&rows, DISCOVERY_HEADER)?);
    let summary = Summary { method: name, d, i_c: params.i_c, i_lambda: params.i_lambda, selections };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    run.outputs.add(SUMMARY_JSON, json + "\n");
    Ok(())
}

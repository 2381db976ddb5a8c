use std::collections::BTreeMap;
use std::path::PathBuf;

use multiko_core::seed::{derive, stream};
use multiko_core::simulate::{aggregate, null_win_diagnostic, run_experiment, Method};
use serde::Serialize;

use super::Run;
use crate::config::parse_config;
use crate::error::CliResult;
use crate::io::rows_csv;

pub const RECORDS_CSV: &str = "records.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const DIFFERENCES_CSV: &str = "power_differences.csv";
pub const NULL_WINS_CSV: &str = "null_wins.csv";

pub const RECORD_HEADER: &str = "method,replicate,alpha,status,discoveries,fdp,power,d,c,lambda";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Experiment config, TOML (or JSON with a .json extension).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Serialize)]
struct NullWinRow {
    method: String,
    i0: usize,
    wins: usize,
    total: usize,
    fraction: f64,
    mean: f64,
    se: f64,
    lower: f64,
    upper: f64,
}

pub fn run(a: &Args, seed: Option<u64>, run: &mut Run) -> CliResult<()> {
    let (mut cfg, sha) = parse_config(&a.config)?;
    run.input(&a.config, &sha);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run.seed = cfg.seed;
    run.manifest.master_seed = cfg.seed;
    run.set_config(&cfg);
    for r in 0..cfg.replicates {
        run.manifest.seed(&format!("replicate[{r}]"), derive(cfg.seed, &[stream::REPLICATE, r as u64]));
    }

    let outputs = run_experiment(&cfg)?;
    let records: Vec<_> = outputs.iter().flat_map(|o| o.records.iter().cloned()).collect();
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let curves = aggregate(&records);

    let mut wins: BTreeMap<&str, Vec<Vec<bool>>> = BTreeMap::new();
    for o in &outputs {
        for (method, seq) in &o.null_wins {
            wins.entry(method).or_default().push(seq.clone());
        }
    }
    let mut win_rows = Vec::new();
    for (method, seqs) in &wins {
        let parsed: Method = method.parse()?;
        let Some(params) = parsed.params() else { continue };
        for pt in null_win_diagnostic(seqs, params?.c()) {
            win_rows.push(NullWinRow {
                method: method.to_string(),
                i0: pt.i0,
                wins: pt.wins,
                total: pt.total,
                fraction: pt.fraction,
                mean: pt.mean,
                se: pt.se,
                lower: pt.lower,
                upper: pt.upper,
            });
        }
    }

    run.outputs.add(RECORDS_CSV, rows_csv(&records, RECORD_HEADER)?);
    run.outputs.add(
        CURVES_CSV,
        rows_csv(&curves.points, "method,alpha,replicates,failed,fdr,fdr_se,fdr_ratio,power,power_se")?,
    );
    run.outputs.add(DIFFERENCES_CSV, rows_csv(&curves.differences, "method_a,method_b,alpha,pairs,mean,se")?);
    if cfg.diagnostics {
        run.outputs.add(NULL_WINS_CSV, rows_csv(&win_rows, "method,i0,wins,total,fraction,mean,se,lower,upper")?);
    }
    println!("replicates={} records={} failed={failed}", cfg.replicates, records.len());
    Ok(())
}

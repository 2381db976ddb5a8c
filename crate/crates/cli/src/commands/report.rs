use std::fmt::Write as _;
use std::path::PathBuf;

use multiko_core::simulate::{aggregate, CurvePoint, ExperimentRecord};
use serde::Serialize;

use super::Run;
use crate::error::{CliError, CliResult};
use crate::io::{digest, read_bytes, rows_csv};

pub const CURVES_LONG_CSV: &str = "curves_long.csv";
pub const REPORT_SVG: &str = "report.svg";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// `records.csv` written by `simulate`.
    #[arg(long)]
    pub records: PathBuf,
    /// Also draw empirical FDR and power against alpha.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Serialize)]
struct LongRow<'a> {
    method: &'a str,
    alpha: f64,
    metric: &'static str,
    value: f64,
    se: f64,
    replicates: usize,
}

fn long_rows(points: &[CurvePoint]) -> Vec<LongRow<'_>> {
    let mut rows = Vec::new();
    for p in points {
        let row = |metric, value, se| LongRow { method: &p.method, alpha: p.alpha, metric, value, se, replicates: p.replicates };
        rows.push(row("fdr", p.fdr, p.fdr_se));
        rows.push(row("fdr_ratio", p.fdr_ratio, p.fdr_se / p.alpha));
        if let (Some(v), Some(se)) = (p.power, p.power_se) {
            rows.push(row("power", v, se));
        }
    }
    rows
}

const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Two panels, FDR and power against alpha, one polyline per method.
fn svg(points: &[CurvePoint]) -> String {
    let (w, h, pad) = (360.0, 300.0, 40.0);
    let mut methods: Vec<&str> = Vec::new();
    for p in points {
        if !methods.contains(&p.method.as_str()) {
            methods.push(&p.method);
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#, 2.0 * w, h + 20.0 * methods.len() as f64);
    for (panel, title) in ["empirical FDR", "power"].iter().enumerate() {
        let x0 = panel as f64 * w;
        let sx = |a: f64| x0 + pad + a * (w - 2.0 * pad);
        let sy = |v: f64| h - pad - v * (h - 2.0 * pad);
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#, sx(0.0), sy(1.0), w - 2.0 * pad, h - 2.0 * pad);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#, x0 + w / 2.0, pad - 10.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">alpha</text>"#, x0 + w / 2.0, h - 8.0);
        if panel == 0 {
            let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4"/>"#, sx(0.0), sy(0.0), sx(1.0), sy(1.0));
        }
        for (m, method) in methods.iter().enumerate() {
            let pts: Vec<String> = points
                .iter()
                .filter(|p| p.method == *method)
                .filter_map(|p| {
                    let v = if panel == 0 { Some(p.fdr) } else { p.power }?;
                    Some(format!("{:.2},{:.2}", sx(p.alpha), sy(v.clamp(0.0, 1.0))))
                })
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" points="{}"/>"#, COLORS[m % COLORS.len()], pts.join(" "));
            }
        }
    }
    for (m, method) in methods.iter().enumerate() {
        let y = h + 14.0 + 20.0 * m as f64;
        let _ = writeln!(out, r#"<text x="{pad}" y="{y}" fill="{}">{method}</text>"#, COLORS[m % COLORS.len()]);
    }
    out.push_str("</svg>\n");
    out
}

pub fn run(a: &Args, run: &mut Run) -> CliResult<()> {
    run.set_config(serde_json::json!({ "records": a.records, "svg": a.svg }));
    let bytes = read_bytes(&a.records)?;
    run.input(&a.records, &digest(&bytes));
    let records = csv::Reader::from_reader(bytes.as_slice())
        .deserialize::<ExperimentRecord>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::io(a.records.display(), e))?;
    if records.is_empty() {
        return Err(CliError::Io(format!("{}: no records", a.records.display())));
    }
    let curves = aggregate(&records);
    run.outputs.add(CURVES_LONG_CSV, rows_csv(&long_rows(&curves.points), "method,alpha,metric,value,se,replicates")?);
    if a.svg {
        run.outputs.add(REPORT_SVG, svg(&curves.points));
    }
    println!("records={} curves={}", records.len(), curves.points.len());
    Ok(())
}

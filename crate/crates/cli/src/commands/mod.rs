pub mod construct;
pub mod report;
pub mod score;
pub mod select;
pub mod simulate;
pub mod tune;

use std::path::Path;

use multiko_core::seed::{derive, derived_rng, Rng};

use crate::error::{CliError, CliResult};
use crate::io::Outputs;
use crate::manifest::RunManifest;
use crate::{Cli, Command};

/// State shared by a subcommand run: the manifest being filled in and the
/// files waiting to be written.
pub struct Run {
    pub seed: u64,
    pub manifest: RunManifest,
    pub outputs: Outputs,
}

impl Run {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Run { seed, manifest: RunManifest::start(subcommand, seed), outputs: Outputs::default() }
    }

    /// RNG for a stage, with its seed recorded under `stage`.
    pub fn rng(&mut self, stage: &str, path: &[u64]) -> Rng {
        let seed = derive(self.seed, path);
        self.manifest.seed(stage, seed);
        derived_rng(self.seed, path)
    }

    pub fn input(&mut self, path: &Path, digest: &str) {
        self.manifest.input(path, digest);
    }

    pub fn set_config(&mut self, value: impl serde::Serialize) {
        self.manifest.config = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
    }
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let name = cli.command.name();
    let mut run = Run::new(name, cli.seed.unwrap_or(0));
    let result = match &cli.command {
        Command::Construct(a) => construct::run(a, &mut run),
        Command::Score(a) => score::run(a, &mut run),
        Command::Select(a) => select::run(a, &mut run),
        Command::Tune(a) => tune::run(a, &mut run),
        Command::Simulate(a) => simulate::run(a, cli.seed, &mut run),
        Command::Report(a) => report::run(a, &mut run),
    };
    let result = result.and_then(|()| {
        run.outputs.write(&cli.out)?;
        run.manifest.outputs = run.outputs.digests().into_iter().collect();
        Ok(())
    });
    let code = match &result {
        Ok(()) => {
            run.manifest.finish("ok".into());
            0
        }
        Err(e) => {
            eprintln!("multiko {name}: {e}");
            run.manifest.finish(format!("failed: {e}"));
            e.exit_code()
        }
    };
    if let Err(e) = run.manifest.write(&cli.out) {
        eprintln!("multiko {name}: {e}");
        return if code == 0 { e.exit_code() } else { code };
    }
    code
}

/// Comma-separated list of values.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| CliError::Config(format!("bad {what} {v:?}"))))
        .collect()
}

pub fn check_alphas(alphas: &[f64]) -> CliResult<()> {
    match alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        Some(a) => Err(CliError::Config(format!("alpha must lie in (0, 1), got {a}"))),
        None if alphas.is_empty() => Err(CliError::Config("no alpha given".into())),
        None => Ok(()),
    }
}

pub const DISCOVERY_HEADER: &str = "alpha,feature_id,W,label,order_index";

/// One discovered feature in a discoveries table.
#[derive(Debug, serde::Serialize)]
pub struct DiscoveryRow {
    pub alpha: f64,
    pub feature_id: usize,
    #[serde(rename = "W")]
    pub w: f64,
    pub label: i8,
    /// Position in the `W` ordering, 0-based.
    pub order_index: Option<usize>,
}

//! Experiment configuration files (TOML, or JSON by `.json` extension).

use std::path::Path;

use multiko_core::simulate::ExperimentConfig;

use crate::error::{CliError, CliResult};
use crate::io::read_bytes;

pub fn parse_config_str(text: &str, json: bool) -> CliResult<ExperimentConfig> {
    let cfg: ExperimentConfig = if json {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Read, apply defaults and validate. Unknown keys are rejected.
pub fn parse_config(path: &Path) -> CliResult<(ExperimentConfig, String)> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::io(path.display(), e))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = parse_config_str(&text, json).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((cfg, crate::io::digest(&bytes)))
}

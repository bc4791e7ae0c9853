//! Config files are TOML documents with a fixed key set; unknown keys are
//! rejected outright and every invariant of the target configuration is
//! re-validated on load.
//!
//! ```toml
//! kind = "recconv"          # or "model"
//! channels = 8              # model: list, one entry per stage
//! kernel = 5
//! levels = 1                # model: list, one entry per stage
//! # depths = [1, 1, 2, 1]   # model only
//! # expansion = 2           # model only, default 2
//! aggregation = "parallel"  # or "recurrent"
//! upsample = "bilinear"     # or "nearest" / "transposed"
//! seed = 42
//! ```

use std::path::Path;

use serde::Deserialize;

use recconv::model::{ModelConfig, StageConfig};
use recconv::{Aggregation, RecConvConfig, UpsampleMode};

use crate::errors::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: String,
    channels: Option<OneOrMany>,
    depths: Option<Vec<usize>>,
    kernel: Option<usize>,
    levels: Option<OneOrMany>,
    expansion: Option<usize>,
    aggregation: Option<String>,
    upsample: Option<String>,
    seed: Option<u64>,
}

/// A validated config: either one bare mixer or a whole model.
#[derive(Debug, Clone)]
pub enum LoadedConfig {
    RecConv { cfg: RecConvConfig, seed: u64 },
    Model(ModelConfig),
}

fn parse_aggregation(s: Option<&str>) -> CliResult<Aggregation> {
    match s {
        None | Some("parallel") => Ok(Aggregation::Parallel),
        Some("recurrent") => Ok(Aggregation::Recurrent),
        Some(other) => Err(CliError::Validation(format!(
            "config: key `aggregation` must be \"parallel\" or \"recurrent\", got \"{other}\""
        ))),
    }
}

fn parse_upsample(s: Option<&str>) -> CliResult<UpsampleMode> {
    match s {
        None | Some("bilinear") => Ok(UpsampleMode::Bilinear),
        Some("nearest") => Ok(UpsampleMode::Nearest),
        Some("transposed") => Ok(UpsampleMode::TransposedDwConv),
        Some(other) => Err(CliError::Validation(format!(
            "config: key `upsample` must be \"bilinear\", \"nearest\" or \"transposed\", got \"{other}\""
        ))),
    }
}

fn require<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Validation(format!("config: missing key `{key}`")))
}

fn forbid<T>(value: &Option<T>, key: &str, kind: &str) -> CliResult<()> {
    if value.is_some() {
        return Err(CliError::Validation(format!(
            "config: key `{key}` is not allowed when kind = \"{kind}\""
        )));
    }
    Ok(())
}

fn scalar(value: OneOrMany, key: &str) -> CliResult<usize> {
    match value {
        OneOrMany::One(v) => Ok(v),
        OneOrMany::Many(_) => Err(CliError::Validation(format!(
            "config: key `{key}` must be a single integer for kind = \"recconv\""
        ))),
    }
}

fn list(value: OneOrMany, key: &str) -> CliResult<Vec<usize>> {
    match value {
        OneOrMany::Many(v) if !v.is_empty() => Ok(v),
        OneOrMany::Many(_) => Err(CliError::Validation(format!(
            "config: key `{key}` must not be an empty list"
        ))),
        OneOrMany::One(_) => Err(CliError::Validation(format!(
            "config: key `{key}` must be a list (one entry per stage) for kind = \"model\""
        ))),
    }
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let raw: RawConfig = toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;

    let aggregation = parse_aggregation(raw.aggregation.as_deref())?;
    let upsample = parse_upsample(raw.upsample.as_deref())?;
    let seed = raw.seed.unwrap_or(0);

    match raw.kind.as_str() {
        "recconv" => {
            forbid(&raw.depths, "depths", "recconv")?;
            forbid(&raw.expansion, "expansion", "recconv")?;
            let channels = scalar(require(raw.channels, "channels")?, "channels")?;
            let kernel = require(raw.kernel, "kernel")?;
            let level = scalar(require(raw.levels, "levels")?, "levels")?;
            let cfg = RecConvConfig {
                channels,
                kernel,
                level,
                aggregation,
                upsample,
            };
            cfg.validate()?;
            Ok(LoadedConfig::RecConv { cfg, seed })
        }
        "model" => {
            let channels = list(require(raw.channels, "channels")?, "channels")?;
            let depths = require(raw.depths, "depths")?;
            let levels = list(require(raw.levels, "levels")?, "levels")?;
            let kernel = require(raw.kernel, "kernel")?;
            if depths.len() != channels.len() || levels.len() != channels.len() {
                return Err(CliError::Validation(format!(
                    "config: `channels`, `depths` and `levels` must have equal lengths, \
                     got {}/{}/{}",
                    channels.len(),
                    depths.len(),
                    levels.len()
                )));
            }
            let stages = channels
                .iter()
                .zip(&depths)
                .zip(&levels)
                .map(|((&channels, &depth), &level)| StageConfig {
                    channels,
                    depth,
                    kernel,
                    level,
                })
                .collect();
            let cfg = ModelConfig {
                stages,
                expansion: raw.expansion.unwrap_or(2),
                aggregation,
                upsample,
                seed,
            };
            cfg.validate()?;
            Ok(LoadedConfig::Model(cfg))
        }
        other => Err(CliError::Validation(format!(
            "config: key `kind` must be \"recconv\" or \"model\", got \"{other}\""
        ))),
    }
}

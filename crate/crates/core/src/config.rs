//! Flat TOML experiment configuration.
//!
//! Precedence is command-line override, then file, then built-in default.
//! Every key is optional in a file; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::editors::{Method, RankDeficiency, SolverConfig};
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::knowledge::SyntheticSpec;
use crate::projector::ThresholdMode;

/// On-disk form of [`ExperimentConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub preserved_count: usize,
    pub effective_rank: usize,
    pub key_noise: f64,
    pub edit_novelty: f64,
    pub world_seed: u64,
    pub batches: usize,
    pub batch_size: usize,
    pub methods: Vec<Method>,
    pub preserved_weight: f64,
    pub ridge_scale: f64,
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
    pub rank_deficiency: RankDeficiency,
    pub seed: u64,
}

pub const CONFIG_KEYS: [&str; 16] = [
    "d_in",
    "d_out",
    "preserved_count",
    "effective_rank",
    "key_noise",
    "edit_novelty",
    "world_seed",
    "batches",
    "batch_size",
    "methods",
    "preserved_weight",
    "ridge_scale",
    "threshold",
    "threshold_mode",
    "rank_deficiency",
    "seed",
];

impl Default for FlatConfig {
    fn default() -> Self {
        ExperimentConfig::default().into()
    }
}

impl From<ExperimentConfig> for FlatConfig {
    fn from(c: ExperimentConfig) -> Self {
        Self {
            d_in: c.world.d_in,
            d_out: c.world.d_out,
            preserved_count: c.world.preserved_count,
            effective_rank: c.world.effective_rank,
            key_noise: c.world.key_noise,
            edit_novelty: c.world.edit_novelty,
            world_seed: c.world.seed,
            batches: c.batches,
            batch_size: c.batch_size,
            methods: c.methods,
            preserved_weight: c.solver.preserved_weight,
            ridge_scale: c.solver.ridge_scale,
            threshold: c.solver.threshold,
            threshold_mode: c.solver.threshold_mode,
            rank_deficiency: c.solver.rank_deficiency,
            seed: c.seed,
        }
    }
}

impl From<FlatConfig> for ExperimentConfig {
    fn from(f: FlatConfig) -> Self {
        Self {
            world: SyntheticSpec {
                d_in: f.d_in,
                d_out: f.d_out,
                preserved_count: f.preserved_count,
                effective_rank: f.effective_rank,
                key_noise: f.key_noise,
                edit_novelty: f.edit_novelty,
                seed: f.world_seed,
            },
            batches: f.batches,
            batch_size: f.batch_size,
            methods: f.methods,
            solver: SolverConfig {
                preserved_weight: f.preserved_weight,
                ridge_scale: f.ridge_scale,
                threshold: f.threshold,
                threshold_mode: f.threshold_mode,
                rank_deficiency: f.rank_deficiency,
                sign_flip_canary: false,
            },
            seed: f.seed,
        }
    }
}

fn parse_override_value(key: &str, raw: &str) -> Value {
    let raw = raw.trim();
    if let Ok(mut t) = format!("v = {raw}").parse::<Table>() {
        if let Some(v) = t.remove("v") {
            return v;
        }
    }
    if key == "methods" {
        return Value::Array(
            raw.split(',')
                .map(|s| Value::String(s.trim().to_string()))
                .collect(),
        );
    }
    Value::String(raw.to_string())
}

fn deserialize(table: Table) -> Result<FlatConfig> {
    if let Some(bad) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(Error::config(bad.clone(), "unknown configuration key"));
    }
    match Value::Table(table.clone()).try_into::<FlatConfig>() {
        Ok(flat) => Ok(flat),
        Err(whole) => {
            // Re-run key by key so the message names the offending field.
            for (k, v) in table {
                let mut single = Table::new();
                single.insert(k.clone(), v);
                if let Err(e) = Value::Table(single).try_into::<FlatConfig>() {
                    return Err(Error::config(k, e.to_string().trim().to_string()));
                }
            }
            Err(Error::config("config", whole.to_string()))
        }
    }
}

/// Parses configuration text; missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
    let config: ExperimentConfig = deserialize(table)?.into();
    config.validate()?;
    Ok(config)
}

/// Resolves file, `KEY=VALUE` overrides and an optional seed into a
/// validated configuration.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::config("config", format!("cannot read {}: {e}", path.display()))
            })?;
            text.parse::<Table>().map_err(|e| {
                Error::config(
                    "config",
                    format!("{}: {}", path.display(), e.to_string().trim()),
                )
            })?
        }
        None => Table::new(),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.clone(), "override must have the form KEY=VALUE"))?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::config(key, "unknown configuration key"));
        }
        table.insert(key.to_string(), parse_override_value(key, raw));
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed)
            .map_err(|_| Error::config("seed", "must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    let config: ExperimentConfig = deserialize(table)?.into();
    config.validate()?;
    Ok(config)
}

/// The fully resolved configuration as TOML; feeding it back reproduces
/// the same configuration exactly.
pub fn to_resolved_string(config: &ExperimentConfig) -> String {
    let flat = FlatConfig::from(config.clone());
    toml::to_string(&flat).expect("flat config serializes")
}

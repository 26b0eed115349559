//! Pipeline configuration file shared by all subcommands.

use std::path::Path;

use anyhow::Context;
use qb_core::buzzer::MlpConfig;
use qb_core::corpus::TournamentAliases;
use qb_core::folds::FoldConfig;
use qb_core::guesser::{DanConfig, IrConfig, LinearConfig};
use qb_core::simulate::ScoreRules;
use serde::{Deserialize, Serialize};

/// Every section is optional; missing sections take their defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub folds: FoldConfig,
    pub tournament_aliases: TournamentAliases,
    pub ir: IrConfig,
    pub linear: LinearConfig,
    pub dan: DanConfig,
    pub buzzer: MlpConfig,
    pub rules: ScoreRules,
}

impl PipelineConfig {
    /// Reads `path` if given, then applies a global seed override.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&raw).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = seed {
            cfg.folds.seed = seed;
            cfg.linear.seed = seed;
            cfg.dan.seed = seed;
            cfg.buzzer.seed = seed;
        }
        Ok(cfg)
    }
}

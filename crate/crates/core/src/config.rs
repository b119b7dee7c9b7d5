//! Pipeline configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{ComparisonMode, ExecLimits};

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration: {field} {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Maximum number of repair rounds after the initial attempt.
    #[serde(alias = "max_repairs_c")]
    pub max_repairs: u32,
    pub temperature: f64,
    pub hint_target_count: u32,
    /// Repair calls allowed per failing hint before it is dropped.
    pub hint_repair_cap: u32,
    pub exec_timeout_ms: u64,
    pub row_cap: usize,
    /// Fraction of each database's items held out as query history.
    pub split_ratio: f64,
    pub seed: u64,
    /// Inject the dataset's evidence text into generation and repair prompts.
    pub include_evidence: bool,
    /// Re-send the hint list in repair prompts.
    pub hints_in_repair: bool,
    /// Compare integer-valued reals equal to integers.
    pub fold_integral_reals: bool,
    pub comparison: ComparisonMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_repairs: 3,
            temperature: 0.3,
            hint_target_count: 10,
            hint_repair_cap: 2,
            exec_timeout_ms: 30_000,
            row_cap: 100_000,
            split_ratio: 0.2,
            seed: 42,
            include_evidence: false,
            hints_in_repair: false,
            fold_integral_reals: false,
            comparison: ComparisonMode::Set,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_repairs == 0 {
            return Err(invalid("max_repairs", "must be at least 1"));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(invalid("temperature", "must be within [0, 2]"));
        }
        if self.hint_target_count == 0 {
            return Err(invalid("hint_target_count", "must be positive"));
        }
        if self.hint_repair_cap == 0 {
            return Err(invalid("hint_repair_cap", "must be positive"));
        }
        if self.exec_timeout_ms == 0 {
            return Err(invalid("exec_timeout_ms", "must be positive"));
        }
        if self.row_cap == 0 {
            return Err(invalid("row_cap", "must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(invalid("split_ratio", "must be within (0, 1)"));
        }
        Ok(())
    }

    pub fn exec_limits(&self) -> ExecLimits {
        ExecLimits::new(self.exec_timeout_ms, self.row_cap)
    }
}

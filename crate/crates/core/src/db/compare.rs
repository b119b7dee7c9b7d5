use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{execute_readonly, ExecError, ExecErrorKind, ExecLimits};
use crate::model::{CellValue, DatabaseProfile, ResultTable};

/// How two result tables are compared. Column names are never compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    /// Deduplicated row sets; row order ignored.
    #[default]
    Set,
    /// Row multisets; row order ignored, duplicates counted.
    Multiset,
    /// Row sequences.
    Ordered,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NormalizeOptions {
    /// Render integer-valued reals as integers (`840.0` compares equal to `840`).
    pub fold_integral_reals: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("cannot compare a truncated result ({side} side hit the row cap)")]
    Truncated { side: &'static str },
}

const NULL_MARK: &str = "∅";

fn integral(r: f64) -> Option<i64> {
    // 2^63 is exactly representable; anything at or beyond it does not fit.
    const LIMIT: f64 = 9_223_372_036_854_775_808.0;
    (r.is_finite() && r.fract() == 0.0 && (-LIMIT..LIMIT).contains(&r)).then_some(r as i64)
}

fn render_real(r: f64) -> String {
    if r == 0.0 {
        // -0.0 and 0.0 are the same value.
        return "0.0".to_string();
    }
    // `Debug` is the shortest representation that parses back to `r`.
    format!("{r:?}")
}

/// Type class used alongside the canonical string when comparing rows, so
/// that the text `'5'` never equals the integer `5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum CellClass {
    Null,
    Integer,
    Real,
    Text,
    Blob,
}

fn canonical_cell(cell: &CellValue, opts: NormalizeOptions) -> (CellClass, String) {
    match cell {
        CellValue::Null => (CellClass::Null, NULL_MARK.to_string()),
        CellValue::Integer(i) => (CellClass::Integer, i.to_string()),
        CellValue::Real(r) => match integral(*r).filter(|_| opts.fold_integral_reals) {
            Some(i) => (CellClass::Integer, i.to_string()),
            None => (CellClass::Real, render_real(*r)),
        },
        CellValue::Text(s) => (CellClass::Text, s.clone()),
        CellValue::Blob(b) => (CellClass::Blob, hex::encode(b)),
    }
}

/// Canonical string rendering of every row with default options.
pub fn normalize(result: &ResultTable) -> Vec<Vec<String>> {
    normalize_with(result, NormalizeOptions::default())
}

/// Canonical string rendering: NULL is `∅`, integers are decimal, reals use
/// the shortest round-trip decimal, text is verbatim and blobs are lowercase
/// hex.
pub fn normalize_with(result: &ResultTable, opts: NormalizeOptions) -> Vec<Vec<String>> {
    result
        .rows
        .iter()
        .map(|row| row.iter().map(|c| canonical_cell(c, opts).1).collect())
        .collect()
}

type RowKey = Vec<(CellClass, String)>;

fn row_keys(result: &ResultTable, opts: NormalizeOptions) -> Vec<RowKey> {
    result
        .rows
        .iter()
        .map(|row| row.iter().map(|c| canonical_cell(c, opts)).collect())
        .collect()
}

/// Compares two results under `mode`. Tables with different column counts
/// never match.
pub fn results_match(
    pred: &ResultTable,
    gold: &ResultTable,
    mode: ComparisonMode,
    opts: NormalizeOptions,
) -> Result<bool, MatchError> {
    if pred.truncated {
        return Err(MatchError::Truncated { side: "predicted" });
    }
    if gold.truncated {
        return Err(MatchError::Truncated { side: "gold" });
    }
    if pred.columns.len() != gold.columns.len() {
        return Ok(false);
    }
    let mut p = row_keys(pred, opts);
    let mut g = row_keys(gold, opts);
    Ok(match mode {
        ComparisonMode::Set => {
            p.into_iter().collect::<BTreeSet<_>>() == g.into_iter().collect::<BTreeSet<_>>()
        }
        ComparisonMode::Multiset => {
            p.sort();
            g.sort();
            p == g
        }
        ComparisonMode::Ordered => p == g,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum EaOutcome {
    Match,
    Mismatch,
    /// The prediction failed to execute; counts as a non-match.
    PredError { error: ExecError },
    /// The gold query failed to execute; the item is not evaluated.
    GoldError { error: ExecError },
}

impl EaOutcome {
    pub fn is_match(&self) -> bool {
        matches!(self, EaOutcome::Match)
    }

    /// `None` when the item is excluded from accuracy denominators.
    pub fn counts_as(&self) -> Option<bool> {
        match self {
            EaOutcome::Match => Some(true),
            EaOutcome::Mismatch | EaOutcome::PredError { .. } => Some(false),
            EaOutcome::GoldError { .. } => None,
        }
    }
}

fn capped(result: Result<ResultTable, ExecError>, limits: &ExecLimits) -> Result<ResultTable, ExecError> {
    let table = result?;
    if table.truncated {
        return Err(ExecError::new(
            ExecErrorKind::RowCapExceeded,
            format!("result exceeds the row cap of {}", limits.row_cap),
        ));
    }
    Ok(table)
}

/// Executes both queries and compares their results.
pub fn ea_match(
    db: &DatabaseProfile,
    pred_sql: &str,
    gold_sql: &str,
    limits: &ExecLimits,
    mode: ComparisonMode,
    opts: NormalizeOptions,
) -> EaOutcome {
    let gold = match capped(execute_readonly(db, gold_sql, limits), limits) {
        Ok(t) => t,
        Err(error) => return EaOutcome::GoldError { error },
    };
    let pred = match capped(execute_readonly(db, pred_sql, limits), limits) {
        Ok(t) => t,
        Err(error) => return EaOutcome::PredError { error },
    };
    match results_match(&pred, &gold, mode, opts) {
        Ok(true) => EaOutcome::Match,
        Ok(false) => EaOutcome::Mismatch,
        // Both sides were checked for truncation above.
        Err(_) => unreachable!("truncated results are rejected before comparison"),
    }
}

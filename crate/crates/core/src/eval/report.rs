//! Run reports: JSON for machines, a difficulty table in markdown for people.

use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::bound::CallBound;
use crate::config::PipelineConfig;
use crate::hints::CurationCounts;
use crate::ledger::LedgerSnapshot;
use crate::model::{Difficulty, Hint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Schema and question only.
    Baseline,
    /// Schema, curated hints and question.
    Hisql,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Hisql => "hisql",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Baseline => "Baseline",
            Mode::Hisql => "HI-SQL",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Mode::Baseline),
            "hisql" | "hi-sql" => Ok(Mode::Hisql),
            other => Err(format!("unknown mode {other:?}; expected baseline or hisql")),
        }
    }
}

/// Per-item accuracy verdict. Serialized as `true`, `false` or
/// `"not_evaluated"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaMark {
    Match,
    Mismatch,
    NotEvaluated,
}

impl EaMark {
    pub fn counts_as(self) -> Option<bool> {
        match self {
            EaMark::Match => Some(true),
            EaMark::Mismatch => Some(false),
            EaMark::NotEvaluated => None,
        }
    }
}

impl Serialize for EaMark {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EaMark::Match => s.serialize_bool(true),
            EaMark::Mismatch => s.serialize_bool(false),
            EaMark::NotEvaluated => s.serialize_str("not_evaluated"),
        }
    }
}

impl<'de> Deserialize<'de> for EaMark {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Bool(true) => Ok(EaMark::Match),
            serde_json::Value::Bool(false) => Ok(EaMark::Mismatch),
            serde_json::Value::String(s) if s == "not_evaluated" => Ok(EaMark::NotEvaluated),
            other => Err(serde::de::Error::custom(format!("invalid ea value {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemOutcome {
    Success,
    Exhausted,
    /// The pipeline itself failed, e.g. the provider was unreachable.
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub db_id: String,
    pub difficulty: Difficulty,
    pub attempts: u32,
    pub outcome: ItemOutcome,
    pub final_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub ea: EaMark,
    /// Why the item did not match or was not evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ea_detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub difficulty: Difficulty,
    pub count: usize,
    pub evaluated: usize,
    pub matches: usize,
    pub ea: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSummary {
    pub db_id: String,
    pub source_query_ids: Vec<String>,
    pub counts: CurationCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub hints: Vec<Hint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub items: usize,
    pub history: usize,
    pub rejected_records: usize,
    pub evaluated: usize,
    pub matches: usize,
    pub not_evaluated: usize,
    pub exhausted: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub config: PipelineConfig,
    pub counts: RunCounts,
    /// Matches over evaluated items; `None` when nothing was evaluated.
    pub ea_total: Option<f64>,
    pub ea_by_difficulty: Vec<BucketRow>,
    pub ledger: LedgerSnapshot,
    pub call_bound: CallBound,
    pub hints: Vec<HintSummary>,
    pub records: Vec<ItemRecord>,
    pub created_at: DateTime<Utc>,
}

fn ratio(matches: usize, evaluated: usize) -> Option<f64> {
    (evaluated > 0).then(|| matches as f64 / evaluated as f64)
}

/// Accuracy per difficulty bucket, in `Difficulty::ALL` order.
pub fn aggregate(records: &[ItemRecord]) -> (Vec<BucketRow>, Option<f64>) {
    let rows = Difficulty::ALL
        .iter()
        .map(|&d| {
            let bucket: Vec<_> = records.iter().filter(|r| r.difficulty == d).collect();
            let evaluated = bucket.iter().filter(|r| r.ea.counts_as().is_some()).count();
            let matches = bucket.iter().filter(|r| r.ea == EaMark::Match).count();
            BucketRow { difficulty: d, count: bucket.len(), evaluated, matches, ea: ratio(matches, evaluated) }
        })
        .collect();
    let evaluated = records.iter().filter(|r| r.ea.counts_as().is_some()).count();
    let matches = records.iter().filter(|r| r.ea == EaMark::Match).count();
    (rows, ratio(matches, evaluated))
}

impl RunReport {
    /// Record ids that also served as hint sources. Always empty for a
    /// correct split.
    pub fn hint_leaks(&self) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| {
                self.hints
                    .iter()
                    .any(|h| h.source_query_ids.iter().any(|s| s == &r.id))
            })
            .map(|r| r.id.clone())
            .collect()
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", x * 100.0))
}

/// Execution accuracy by difficulty, followed by the call ledger.
pub fn render_markdown(report: &RunReport) -> String {
    let mut cols: Vec<&BucketRow> = report
        .ea_by_difficulty
        .iter()
        .filter(|r| r.difficulty != Difficulty::Unknown)
        .collect();
    if let Some(unknown) = report
        .ea_by_difficulty
        .iter()
        .find(|r| r.difficulty == Difficulty::Unknown && r.count > 0)
    {
        cols.push(unknown);
    }
    let mut out = String::new();
    let _ = writeln!(out, "# Execution accuracy ({})\n", report.mode.label());

    let mut header = String::from("| Mode |");
    let mut rule = String::from("|---|");
    let mut ea_row = format!("| {} |", report.mode.label());
    let mut n_row = String::from("| Count |");
    for c in &cols {
        let _ = write!(header, " {} |", c.difficulty.label());
        rule.push_str("---:|");
        let _ = write!(ea_row, " {} |", pct(c.ea));
        let _ = write!(n_row, " {} |", c.count);
    }
    header.push_str(" Total |");
    rule.push_str("---:|");
    let _ = write!(ea_row, " {} |", pct(report.ea_total));
    let _ = write!(n_row, " {} |", report.counts.items);
    for line in [header, rule, ea_row, n_row] {
        let _ = writeln!(out, "{line}");
    }

    let c = &report.counts;
    let _ = writeln!(
        out,
        "\nEvaluated {} of {} test items ({} matched, {} not evaluated, {} exhausted, {} errors). {} items held out as history.",
        c.evaluated, c.items, c.matches, c.not_evaluated, c.exhausted, c.errors, c.history
    );

    let l = &report.ledger;
    let b = &report.call_bound;
    let _ = writeln!(out, "\n## LLM calls\n");
    let _ = writeln!(out, "| Purpose | Calls |\n|---|---:|");
    let _ = writeln!(out, "| Hint curation | {} |", l.hint_curation);
    let _ = writeln!(out, "| Hint repair (S) | {} |", l.hint_repair);
    let _ = writeln!(out, "| Generation | {} |", l.generation);
    let _ = writeln!(out, "| Repair | {} |", l.repair);
    let _ = writeln!(out, "| Total | {} |", l.total());
    let _ = writeln!(
        out,
        "\nC x N + S = {} x {} + {} = {}. Generation plus repair ceiling (1 + C) x N = {}.",
        b.c, b.n, b.s, b.cn_plus_s, b.query_call_ceiling
    );
    if b.ok {
        let _ = writeln!(out, "Call bound: ok");
    } else {
        let _ = writeln!(out, "Call bound: VIOLATED");
        for v in &b.violations {
            let _ = writeln!(out, "- {v}");
        }
    }
    out
}

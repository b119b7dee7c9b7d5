//! Shared domain types.
//!
//! Everything in here is a plain value object. The only piece of shared
//! mutable state in the pipeline, [`CallLedger`](crate::ledger::CallLedger),
//! lives in its own module.

use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// A registered SQLite database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseProfile {
    pub db_id: String,
    pub file_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ddl: Option<SchemaText>,
}

impl DatabaseProfile {
    pub fn new(db_id: impl Into<String>, file_path: impl Into<PathBuf>) -> Self {
        Self {
            db_id: db_id.into(),
            file_path: file_path.into(),
            ddl: None,
        }
    }
}

/// Extracted DDL of a database, in catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SchemaTextRepr", into = "SchemaTextRepr")]
pub struct SchemaText {
    statements: Vec<String>,
    rendered: String,
}

#[derive(Serialize, Deserialize)]
struct SchemaTextRepr {
    statements: Vec<String>,
    rendered: String,
}

impl From<SchemaTextRepr> for SchemaText {
    // `rendered` is always recomputed so it can never drift from `statements`.
    fn from(repr: SchemaTextRepr) -> Self {
        SchemaText::new(repr.statements)
    }
}

impl From<SchemaText> for SchemaTextRepr {
    fn from(s: SchemaText) -> Self {
        SchemaTextRepr {
            statements: s.statements,
            rendered: s.rendered,
        }
    }
}

impl SchemaText {
    pub fn new(statements: Vec<String>) -> Self {
        let rendered = statements.join("\n\n");
        Self {
            statements,
            rendered,
        }
    }

    pub fn statements(&self) -> &[String] {
        &self.statements
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Number of `CREATE TABLE` statements.
    pub fn table_count(&self) -> usize {
        self.statements
            .iter()
            .filter(|s| {
                s.trim_start()
                    .get(..12)
                    .is_some_and(|p| p.eq_ignore_ascii_case("CREATE TABLE"))
            })
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintStatus {
    Unvalidated,
    Valid,
    Repaired,
    Dropped,
}

impl HintStatus {
    /// Whether a hint in this state is written to the hint file.
    pub fn is_kept(self) -> bool {
        matches!(self, HintStatus::Valid | HintStatus::Repaired)
    }
}

/// A curated `(description, sql_query)` exemplar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub description: String,
    pub sql_query: String,
    pub status: HintStatus,
    #[serde(default)]
    pub repair_count: u32,
    /// Engine error from the last failed validation, kept for manual review.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

impl Hint {
    pub fn new(description: impl Into<String>, sql_query: impl Into<String>) -> Self {
        Self {
            description: description.into(),
            sql_query: sql_query.into(),
            status: HintStatus::Unvalidated,
            repair_count: 0,
            last_error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintSet {
    pub db_id: String,
    pub hints: Vec<Hint>,
    pub source_query_ids: Vec<String>,
    pub created_at: DateTime<Utc>,
}

impl HintSet {
    pub fn empty(db_id: impl Into<String>) -> Self {
        Self {
            db_id: db_id.into(),
            hints: Vec::new(),
            source_query_ids: Vec::new(),
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    /// Hints that survive serialization, in order.
    pub fn kept(&self) -> impl Iterator<Item = &Hint> {
        self.hints.iter().filter(|h| h.status.is_kept())
    }

    pub fn dropped(&self) -> impl Iterator<Item = &Hint> {
        self.hints
            .iter()
            .filter(|h| h.status == HintStatus::Dropped)
    }

    pub fn kept_len(&self) -> usize {
        self.kept().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NLQuery {
    pub id: String,
    pub db_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
    Unknown,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Simple,
        Difficulty::Moderate,
        Difficulty::Challenging,
        Difficulty::Unknown,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Difficulty::Simple => "Simple",
            Difficulty::Moderate => "Moderate",
            Difficulty::Challenging => "Challenging",
            Difficulty::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Maps a dataset difficulty label onto a bucket. Unrecognized or missing
/// labels land in [`Difficulty::Unknown`].
pub fn difficulty_bucket(raw: Option<&str>) -> Difficulty {
    match raw.map(str::trim) {
        Some(s) if s.eq_ignore_ascii_case("simple") => Difficulty::Simple,
        Some(s) if s.eq_ignore_ascii_case("moderate") => Difficulty::Moderate,
        Some(s) if s.eq_ignore_ascii_case("challenging") => Difficulty::Challenging,
        _ => Difficulty::Unknown,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub query: NLQuery,
    pub gold_sql: String,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Success,
    ExecError { message: String },
}

impl AttemptOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, AttemptOutcome::Success)
    }
}

/// One generate-or-repair round. Index 0 is the initial generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub index: u32,
    pub sql: String,
    pub outcome: AttemptOutcome,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum VerificationOutcome {
    Success {
        result: ResultTable,
        attempts: Vec<Attempt>,
    },
    Exhausted {
        attempts: Vec<Attempt>,
        last_error: String,
    },
}

impl VerificationOutcome {
    pub fn attempts(&self) -> &[Attempt] {
        match self {
            VerificationOutcome::Success { attempts, .. }
            | VerificationOutcome::Exhausted { attempts, .. } => attempts,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, VerificationOutcome::Success { .. })
    }

    pub fn result(&self) -> Option<&ResultTable> {
        match self {
            VerificationOutcome::Success { result, .. } => Some(result),
            VerificationOutcome::Exhausted { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum CellValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    #[serde(with = "hex_bytes")]
    Blob(Vec<u8>),
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

impl CellValue {
    /// Plain JSON rendering for display surfaces; blobs become hex strings.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CellValue::Null => serde_json::Value::Null,
            CellValue::Integer(i) => (*i).into(),
            CellValue::Real(r) => serde_json::Number::from_f64(*r)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            CellValue::Text(s) => s.clone().into(),
            CellValue::Blob(b) => hex::encode(b).into(),
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Null => f.write_str("NULL"),
            CellValue::Integer(i) => write!(f, "{i}"),
            CellValue::Real(r) => write!(f, "{r:?}"),
            CellValue::Text(s) => f.write_str(s),
            CellValue::Blob(b) => write!(f, "x'{}'", hex::encode(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
    pub truncated: bool,
}

impl ResultTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<CellValue>>) -> Self {
        Self {
            columns,
            rows,
            truncated: false,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.rows.iter().all(|r| r.len() == self.columns.len())
    }

    /// Renders an ASCII table, showing at most `max_rows` rows.
    pub fn render_text(&self, max_rows: usize) -> String {
        let shown: Vec<Vec<String>> = self
            .rows
            .iter()
            .take(max_rows)
            .map(|r| r.iter().map(|c| c.to_string()).collect())
            .collect();
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for row in &shown {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            format!("| {} |\n", parts.join(" | "))
        };
        let sep: String = format!(
            "+{}+\n",
            widths
                .iter()
                .map(|w| "-".repeat(w + 2))
                .collect::<Vec<_>>()
                .join("+")
        );
        let mut out = sep.clone();
        out.push_str(&line(&self.columns));
        out.push_str(&sep);
        for row in &shown {
            out.push_str(&line(row));
        }
        out.push_str(&sep);
        let hidden = self.rows.len().saturating_sub(max_rows);
        if hidden > 0 || self.truncated {
            out.push_str(&format!(
                "({} rows shown{})\n",
                shown.len(),
                if self.truncated { ", result truncated" } else { "" }
            ));
        }
        out
    }
}

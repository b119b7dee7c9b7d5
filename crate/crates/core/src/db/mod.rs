//! All contact with SQLite: DDL extraction, read-only execution under
//! limits, and execution-accuracy comparison.
//!
//! Every call opens its own read-only connection, so operations on the same
//! file can run from any number of threads at once.

mod compare;

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::{ffi, Batch, Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CellValue, DatabaseProfile, ResultTable, SchemaText};

pub use compare::{
    ea_match, normalize, normalize_with, results_match, ComparisonMode, EaOutcome, MatchError,
    NormalizeOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub timeout_ms: u64,
    pub row_cap: usize,
}

impl ExecLimits {
    /// Zero values are bumped to 1 so both limits stay positive.
    pub fn new(timeout_ms: u64, row_cap: usize) -> Self {
        Self {
            timeout_ms: timeout_ms.max(1),
            row_cap: row_cap.max(1),
        }
    }
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self::new(30_000, 100_000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecErrorKind {
    Syntax,
    MissingObject,
    Runtime,
    Timeout,
    RowCapExceeded,
    WriteRejected,
}

impl fmt::Display for ExecErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExecErrorKind::Syntax => "syntax",
            ExecErrorKind::MissingObject => "missing_object",
            ExecErrorKind::Runtime => "runtime",
            ExecErrorKind::Timeout => "timeout",
            ExecErrorKind::RowCapExceeded => "row_cap_exceeded",
            ExecErrorKind::WriteRejected => "write_rejected",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind}: {message}")]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub message: String,
}

impl ExecError {
    pub fn new(kind: ExecErrorKind, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.trim().is_empty() {
            message = kind.to_string();
        }
        Self { kind, message }
    }
}

#[derive(Debug, Error)]
pub enum DdlError {
    #[error("cannot open database {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("database {path} is corrupt or not a SQLite file: {message}")]
    Corrupt { path: String, message: String },
}

fn open_readonly(path: &Path) -> rusqlite::Result<Connection> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    conn.pragma_update(None, "query_only", true)?;
    Ok(conn)
}

/// Returns every `CREATE TABLE/INDEX/VIEW` statement in catalog order.
/// Internal `sqlite_*` objects and implicit indexes are skipped.
pub fn extract_ddl(db: &DatabaseProfile) -> Result<SchemaText, DdlError> {
    let path = db.file_path.display().to_string();
    if let Err(e) = std::fs::File::open(&db.file_path) {
        return Err(DdlError::Unreadable {
            path,
            message: e.to_string(),
        });
    }
    let classify = |e: rusqlite::Error| match e.sqlite_error_code() {
        Some(rusqlite::ErrorCode::NotADatabase) | Some(rusqlite::ErrorCode::DatabaseCorrupt) => {
            DdlError::Corrupt {
                path: path.clone(),
                message: e.to_string(),
            }
        }
        _ => DdlError::Unreadable {
            path: path.clone(),
            message: e.to_string(),
        },
    };
    let conn = open_readonly(&db.file_path).map_err(classify)?;
    let mut stmt = conn
        .prepare(
            "SELECT sql FROM sqlite_master \
             WHERE sql IS NOT NULL AND type IN ('table', 'index', 'view') \
             AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' \
             ORDER BY rowid",
        )
        .map_err(classify)?;
    let statements = stmt
        .query_map([], |row| row.get::<_, String>(0))
        .and_then(|rows| rows.collect::<rusqlite::Result<Vec<_>>>())
        .map_err(classify)?;
    Ok(SchemaText::new(statements))
}

/// The SQLite failure code and message behind `err`, if any.
fn sqlite_failure(err: &rusqlite::Error) -> Option<(&ffi::Error, Option<&str>)> {
    match err {
        rusqlite::Error::SqliteFailure(f, msg) => Some((f, msg.as_deref())),
        rusqlite::Error::SqlInputError { error, msg, .. } => Some((error, Some(msg.as_str()))),
        _ => None,
    }
}

fn classify_sqlite_error(err: &rusqlite::Error) -> ExecErrorKind {
    if let Some((f, msg)) = sqlite_failure(err) {
        match f.code {
            rusqlite::ErrorCode::OperationInterrupted => return ExecErrorKind::Timeout,
            rusqlite::ErrorCode::ReadOnly => return ExecErrorKind::WriteRejected,
            _ => {}
        }
        if f.extended_code == ffi::SQLITE_AUTH {
            return ExecErrorKind::WriteRejected;
        }
        let msg = msg.unwrap_or("");
        if msg.starts_with("no such table")
            || msg.starts_with("no such column")
            || msg.starts_with("no such function")
            || msg.starts_with("no such view")
            || msg.starts_with("no such index")
        {
            return ExecErrorKind::MissingObject;
        }
        if msg.contains("syntax error")
            || msg.contains("incomplete input")
            || msg.contains("unrecognized token")
        {
            return ExecErrorKind::Syntax;
        }
    }
    ExecErrorKind::Runtime
}

fn to_exec_error(err: rusqlite::Error) -> ExecError {
    let kind = classify_sqlite_error(&err);
    let message = match sqlite_failure(&err) {
        Some((_, Some(msg))) => msg.to_string(),
        _ => err.to_string(),
    };
    if kind == ExecErrorKind::Timeout {
        return ExecError::new(kind, format!("query interrupted: {message}"));
    }
    ExecError::new(kind, message)
}

fn cell_from(value: rusqlite::types::ValueRef<'_>) -> CellValue {
    use rusqlite::types::ValueRef;
    match value {
        ValueRef::Null => CellValue::Null,
        ValueRef::Integer(i) => CellValue::Integer(i),
        ValueRef::Real(r) => CellValue::Real(r),
        ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => CellValue::Blob(b.to_vec()),
    }
}

/// Runs a single statement against a read-only connection.
///
/// Statements that would write are rejected before execution. Rows beyond
/// `limits.row_cap` are not fetched; the returned table is then flagged
/// `truncated`. Execution is interrupted once `limits.timeout_ms` elapses.
pub fn execute_readonly(
    db: &DatabaseProfile,
    sql: &str,
    limits: &ExecLimits,
) -> Result<ResultTable, ExecError> {
    let conn = open_readonly(&db.file_path).map_err(to_exec_error)?;
    execute_on(&conn, sql, limits)
}

fn execute_on(conn: &Connection, sql: &str, limits: &ExecLimits) -> Result<ResultTable, ExecError> {
    let timeout = Duration::from_millis(limits.timeout_ms);
    let started = Instant::now();
    conn.progress_handler(1_000, Some(move || started.elapsed() > timeout));

    let mut batch = Batch::new(conn, sql);
    let mut stmt = match batch.next().map_err(to_exec_error)? {
        Some(stmt) => stmt,
        None => return Err(ExecError::new(ExecErrorKind::Syntax, "empty statement")),
    };
    match batch.next() {
        Ok(None) => {}
        Ok(Some(_)) | Err(_) => {
            return Err(ExecError::new(
                ExecErrorKind::Syntax,
                "multiple statements are not allowed; submit a single query",
            ))
        }
    }
    if !stmt.readonly() {
        return Err(ExecError::new(
            ExecErrorKind::WriteRejected,
            "statement would modify the database; only read-only queries are allowed",
        ));
    }

    let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
    let width = columns.len();
    let mut rows = Vec::new();
    let mut truncated = false;
    let mut cursor = stmt.raw_query();
    while let Some(row) = cursor.next().map_err(to_exec_error)? {
        if rows.len() == limits.row_cap {
            truncated = true;
            break;
        }
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(cell_from(row.get_ref(i).map_err(to_exec_error)?));
        }
        rows.push(cells);
    }
    Ok(ResultTable {
        columns,
        rows,
        truncated,
    })
}

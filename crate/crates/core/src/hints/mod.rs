//! Hint curation: turn a log of historical queries into a validated set of
//! `(description, sql_query)` exemplars for one database.
//!
//! The flow is one curation call to the model, execution of every proposed
//! query against the database, and up to `hint_repair_cap` repair calls for
//! each query that fails. Queries that still fail are dropped and logged.

mod store;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::db::{execute_readonly, extract_ddl, DdlError, ExecError, ExecErrorKind, ExecLimits};
use crate::ledger::CallLedger;
use crate::llm::{extract_sql, Bindings, ChatMessage, LlmClient, LlmError, PromptError, TemplateName};
use crate::model::{DatabaseProfile, Hint, HintSet, HintStatus, SchemaText};

pub use store::{
    hint_file_path, load_hint_set, meta_file_path, render_hint_array, write_hint_set,
    CurationGuard, CurationLocks, HintFileEntry, HintSetMeta, StoreError,
};

/// A previously executed query, optionally with the question it answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub sql: String,
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("no historical queries supplied")]
    EmptyHistory,
    #[error("history entry {0} has empty SQL")]
    EmptyHistorySql(String),
    #[error("model response is not a JSON array of {{description, sql_query}} objects, even after a format reminder")]
    Unparseable { response: String },
    #[error("model proposed no hints")]
    EmptyResult,
    #[error("hint repair needs a hint that failed validation, got status {0:?}")]
    NotRepairable(HintStatus),
    #[error(transparent)]
    Schema(#[from] DdlError),
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub(crate) const FORMAT_REMINDER: &str = "Your previous reply could not be parsed. \
Reply again with only a JSON array. Each element must be an object with exactly the keys \
\"description\" and \"sql_query\", both strings. Do not add any other text.";

fn render_history(history: &[HistoryEntry]) -> String {
    let mut out = String::new();
    for entry in history {
        out.push_str(&format!("[{}]", entry.id));
        if let Some(q) = entry.question.as_deref().filter(|q| !q.trim().is_empty()) {
            out.push_str(&format!(" Question: {}", q.trim()));
        }
        out.push('\n');
        out.push_str(entry.sql.trim());
        out.push_str("\n\n");
    }
    out.truncate(out.trim_end().len());
    out
}

#[derive(Deserialize)]
struct ProposedHint {
    description: String,
    sql_query: String,
}

fn fenced_bodies(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(close) = after.find("```") else { break };
        let block = &after[..close];
        out.push(block.find('\n').map_or(block, |nl| &block[nl + 1..]));
        rest = &after[close + 3..];
    }
    out
}

/// Finds the first JSON array of hint objects in a model reply.
fn parse_proposals(text: &str) -> Option<Vec<ProposedHint>> {
    let mut candidates: Vec<&str> = vec![text.trim()];
    candidates.extend(fenced_bodies(text));
    if let (Some(a), Some(b)) = (text.find('['), text.rfind(']')) {
        if a < b {
            candidates.push(&text[a..=b]);
        }
    }
    candidates
        .into_iter()
        .find_map(|c| serde_json::from_str::<Vec<ProposedHint>>(c.trim()).ok())
}

fn schema_of(db: &DatabaseProfile) -> Result<SchemaText, DdlError> {
    match &db.ddl {
        Some(ddl) => Ok(ddl.clone()),
        None => extract_ddl(db),
    }
}

/// Executes the hint read-only. On success an unvalidated hint becomes
/// valid; the result rows are ignored.
pub fn validate_hint(
    db: &DatabaseProfile,
    hint: &mut Hint,
    limits: &ExecLimits,
) -> Result<(), ExecError> {
    execute_readonly(db, &hint.sql_query, limits)?;
    if hint.status == HintStatus::Unvalidated {
        hint.status = HintStatus::Valid;
    }
    Ok(())
}

/// Asks the model to fix a hint that failed validation, re-validating after
/// every answer. After `cfg.hint_repair_cap` failed rounds the hint is
/// returned as dropped.
pub fn repair_hint(
    llm: &LlmClient,
    db: &DatabaseProfile,
    schema: &SchemaText,
    mut hint: Hint,
    error: &ExecError,
    cfg: &PipelineConfig,
    ledger: &CallLedger,
) -> Result<Hint, CurationError> {
    if hint.status != HintStatus::Unvalidated {
        return Err(CurationError::NotRepairable(hint.status));
    }
    let limits = cfg.exec_limits();
    let mut failed_sql = hint.sql_query.clone();
    let mut last_error = error.to_string();
    for round in 1..=cfg.hint_repair_cap {
        hint.repair_count = round;
        let mut b = Bindings::new();
        b.insert("schema", schema.rendered().to_string());
        b.insert("question", hint.description.clone());
        b.insert("failed_sql", failed_sql.clone());
        b.insert("error", last_error.clone());
        let req = llm.render(TemplateName::HintRepair, &b, cfg.temperature)?;
        let reply = match llm.complete(&req, ledger) {
            Ok(r) => r,
            Err(e) => {
                last_error = format!("provider error: {e}");
                continue;
            }
        };
        let candidate = match extract_sql(&reply) {
            Ok(sql) => sql,
            Err(_) => {
                last_error = ExecError::new(ExecErrorKind::Syntax, "model returned no SQL").to_string();
                continue;
            }
        };
        match execute_readonly(db, &candidate, &limits) {
            Ok(_) => {
                hint.sql_query = candidate;
                hint.status = HintStatus::Repaired;
                hint.last_error = None;
                return Ok(hint);
            }
            Err(e) => {
                failed_sql = candidate;
                last_error = e.to_string();
            }
        }
    }
    log::warn!(
        "dropping hint {:?} after {} repair attempt(s): {last_error}",
        hint.description,
        hint.repair_count
    );
    hint.status = HintStatus::Dropped;
    hint.last_error = Some(last_error);
    Ok(hint)
}

/// Curates a hint set for `db` from its query history.
///
/// Exactly one curation call is made, plus a single format-reminder call if
/// the first reply cannot be parsed. The returned set keeps dropped hints
/// after all surviving ones so they can be reviewed; they are never written
/// to the hint file.
pub fn curate_hints(
    llm: &LlmClient,
    db: &DatabaseProfile,
    history: &[HistoryEntry],
    cfg: &PipelineConfig,
    ledger: &CallLedger,
) -> Result<HintSet, CurationError> {
    if history.is_empty() {
        return Err(CurationError::EmptyHistory);
    }
    if let Some(e) = history.iter().find(|e| e.sql.trim().is_empty()) {
        return Err(CurationError::EmptyHistorySql(e.id.clone()));
    }
    let schema = schema_of(db)?;

    let mut b = Bindings::new();
    b.insert("schema", schema.rendered().to_string());
    b.insert("history", render_history(history));
    b.insert("target_count", cfg.hint_target_count.to_string());
    let req = llm.render(TemplateName::HintCuration, &b, cfg.temperature)?;
    let reply = llm.complete(&req, ledger)?;

    let proposals = match parse_proposals(&reply) {
        Some(p) => p,
        None => {
            log::info!("curation reply for {} was not parseable; reprompting once", db.db_id);
            let mut retry = req.clone();
            retry.messages.push(ChatMessage::assistant(reply));
            retry.messages.push(ChatMessage::user(FORMAT_REMINDER));
            let second = llm.complete(&retry, ledger)?;
            parse_proposals(&second).ok_or(CurationError::Unparseable { response: second })?
        }
    };
    if proposals.is_empty() {
        return Err(CurationError::EmptyResult);
    }
    let target = cfg.hint_target_count as usize;
    if proposals.len() > target {
        log::info!("model proposed {} hints; keeping the first {target}", proposals.len());
    }

    let limits = cfg.exec_limits();
    let mut hints = Vec::new();
    for p in proposals.into_iter().take(target) {
        let mut hint = Hint::new(p.description, p.sql_query);
        let hint = match validate_hint(db, &mut hint, &limits) {
            Ok(()) => hint,
            Err(e) => {
                hint.last_error = Some(e.to_string());
                repair_hint(llm, db, &schema, hint, &e, cfg, ledger)?
            }
        };
        hints.push(hint);
    }
    // Surviving hints first, dropped ones after, each group in proposal order.
    hints.sort_by_key(|h| !h.status.is_kept());

    Ok(HintSet {
        db_id: db.db_id.clone(),
        hints,
        source_query_ids: history.iter().map(|e| e.id.clone()).collect(),
        created_at: Utc::now(),
    })
}

/// Counts of hint states, as reported after curation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationCounts {
    pub proposed: usize,
    pub valid: usize,
    pub repaired: usize,
    pub dropped: usize,
}

impl CurationCounts {
    pub fn of(set: &HintSet) -> Self {
        let count = |s: HintStatus| set.hints.iter().filter(|h| h.status == s).count();
        Self {
            proposed: set.hints.len(),
            valid: count(HintStatus::Valid),
            repaired: count(HintStatus::Repaired),
            dropped: count(HintStatus::Dropped),
        }
    }
}

//! Question to verified SQL: one generation call conditioned on the full
//! schema and the hint set, then an execute-and-repair loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::db::{execute_readonly, extract_ddl, DdlError, ExecError, ExecErrorKind};
use crate::hints::render_hint_array;
use crate::ledger::CallLedger;
use crate::llm::{evidence_section, extract_sql, Bindings, ChatRequest, LlmClient, LlmError, PromptError, TemplateName};
use crate::model::{
    Attempt, AttemptOutcome, DatabaseProfile, HintSet, NLQuery, SchemaText, VerificationOutcome,
};

/// Stands in for the hint list when a database has no hints.
pub const NO_HINTS: &str = "No hints available for this database.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("database {0} has an empty schema")]
    EmptySchema(String),
    #[error("max_repairs must be at least 1")]
    NoRepairBudget,
    #[error(transparent)]
    Schema(#[from] DdlError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error("cannot append to failure log {path}: {source}")]
    FailureLog {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A question that exhausted its repair budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub query_id: String,
    pub db_id: String,
    pub question: String,
    pub last_sql: String,
    pub last_error: String,
    pub ts: DateTime<Utc>,
}

/// Append-only record of exhausted questions, kept in memory and optionally
/// mirrored to a JSON-lines file.
#[derive(Debug, Default)]
pub struct FailureLog {
    path: Option<PathBuf>,
    entries: Mutex<Vec<FailureEntry>>,
}

impl FailureLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            entries: Mutex::default(),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, entry: FailureEntry) -> Result<(), PipelineError> {
        // The lock also serializes file appends across workers.
        let mut entries = self.entries.lock().expect("failure log poisoned");
        if let Some(path) = &self.path {
            let io = |source| PipelineError::FailureLog {
                path: path.clone(),
                source,
            };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            let mut line = serde_json::to_string(&entry).expect("failure entry serializes");
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            f.write_all(line.as_bytes()).map_err(io)?;
        }
        entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> Vec<FailureEntry> {
        self.entries.lock().expect("failure log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("failure log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which hint set conditioned an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintsRef {
    pub db_id: String,
    pub hint_count: usize,
    pub created_at: DateTime<Utc>,
}

impl HintsRef {
    pub fn of(set: &HintSet) -> Self {
        Self {
            db_id: set.db_id.clone(),
            hint_count: set.kept_len(),
            created_at: set.created_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query: NLQuery,
    pub hints_used: HintsRef,
    pub outcome: VerificationOutcome,
    /// The last SQL that was executed.
    pub final_sql: String,
}

impl AnswerRecord {
    pub fn attempts(&self) -> &[Attempt] {
        self.outcome.attempts()
    }
}

/// The hint list as it appears in prompts.
pub fn hints_section(hints: &HintSet) -> String {
    if hints.kept_len() == 0 {
        NO_HINTS.to_string()
    } else {
        render_hint_array(hints)
    }
}

fn evidence_binding(q: &NLQuery, cfg: &PipelineConfig) -> String {
    if cfg.include_evidence {
        evidence_section(q.evidence.as_deref())
    } else {
        String::new()
    }
}

/// The generation request for `q`, without sending it.
pub fn generation_request(
    llm: &LlmClient,
    schema: &SchemaText,
    hints: &HintSet,
    q: &NLQuery,
    cfg: &PipelineConfig,
) -> Result<ChatRequest, PipelineError> {
    if schema.is_empty() {
        return Err(PipelineError::EmptySchema(q.db_id.clone()));
    }
    let mut b = Bindings::new();
    b.insert("schema", schema.rendered().to_string());
    b.insert("hints", hints_section(hints));
    b.insert("question", q.question.trim().to_string());
    b.insert("evidence", evidence_binding(q, cfg));
    Ok(llm.render(TemplateName::Generation, &b, cfg.temperature)?)
}

/// One generation call. Model output with no recognisable SQL yields an
/// empty string, which the verifier treats as a syntax error.
pub fn generate_sql(
    llm: &LlmClient,
    schema: &SchemaText,
    hints: &HintSet,
    q: &NLQuery,
    cfg: &PipelineConfig,
    ledger: &CallLedger,
) -> Result<String, PipelineError> {
    let req = generation_request(llm, schema, hints, q, cfg)?;
    let reply = llm.complete(&req, ledger)?;
    Ok(extract_sql(&reply).unwrap_or_default())
}

fn repair_request(
    llm: &LlmClient,
    schema: &SchemaText,
    hints: Option<&HintSet>,
    q: &NLQuery,
    failed_sql: &str,
    error: &str,
    cfg: &PipelineConfig,
) -> Result<ChatRequest, PipelineError> {
    let mut b = Bindings::new();
    b.insert("schema", schema.rendered().to_string());
    b.insert("question", q.question.trim().to_string());
    b.insert("failed_sql", failed_sql.to_string());
    b.insert("error", error.to_string());
    b.insert("evidence", evidence_binding(q, cfg));
    if let Some(h) = hints.filter(|_| cfg.hints_in_repair) {
        b.insert("hints", format!("### Hints\n{}\n\n", hints_section(h)));
    }
    Ok(llm.render(TemplateName::SqlRepair, &b, cfg.temperature)?)
}

fn run_attempt(
    db: &DatabaseProfile,
    index: u32,
    sql: String,
    cfg: &PipelineConfig,
) -> (Attempt, Result<crate::model::ResultTable, ExecError>) {
    let start = Instant::now();
    let res = if sql.trim().is_empty() {
        Err(ExecError::new(ExecErrorKind::Syntax, "model output contains no SQL"))
    } else {
        execute_readonly(db, &sql, &cfg.exec_limits())
    };
    let outcome = match &res {
        Ok(_) => AttemptOutcome::Success,
        Err(e) => AttemptOutcome::ExecError { message: e.to_string() },
    };
    let attempt = Attempt {
        index,
        sql,
        outcome,
        latency_ms: start.elapsed().as_millis() as u64,
    };
    (attempt, res)
}

#[allow(clippy::too_many_arguments)]
fn verify_inner(
    llm: &LlmClient,
    db: &DatabaseProfile,
    schema: &SchemaText,
    hints: Option<&HintSet>,
    q: &NLQuery,
    sql: String,
    cfg: &PipelineConfig,
    ledger: &CallLedger,
    failure_log: &FailureLog,
) -> Result<VerificationOutcome, PipelineError> {
    if cfg.max_repairs == 0 {
        return Err(PipelineError::NoRepairBudget);
    }
    let mut attempts = Vec::new();
    let mut sql = sql;
    for index in 0..=cfg.max_repairs {
        if index > 0 {
            let last = attempts.last().expect("a failed attempt precedes every repair");
            let Attempt { sql: failed, outcome, .. } = last;
            let AttemptOutcome::ExecError { message } = outcome else {
                unreachable!("repairs follow failures only")
            };
            let req = repair_request(llm, schema, hints, q, failed, message, cfg)?;
            let reply = llm.complete(&req, ledger)?;
            sql = extract_sql(&reply).unwrap_or_default();
        }
        let (attempt, res) = run_attempt(db, index, std::mem::take(&mut sql), cfg);
        attempts.push(attempt);
        if let Ok(result) = res {
            return Ok(VerificationOutcome::Success { result, attempts });
        }
    }
    let last = attempts.last().expect("at least one attempt");
    let last_error = match &last.outcome {
        AttemptOutcome::ExecError { message } => message.clone(),
        AttemptOutcome::Success => unreachable!("success returns early"),
    };
    failure_log.append(FailureEntry {
        query_id: q.id.clone(),
        db_id: q.db_id.clone(),
        question: q.question.clone(),
        last_sql: last.sql.clone(),
        last_error: last_error.clone(),
        ts: Utc::now(),
    })?;
    Ok(VerificationOutcome::Exhausted { attempts, last_error })
}

/// Executes `sql`; on failure asks the model for a fix, at most
/// `cfg.max_repairs` times. Exhausted questions are appended to
/// `failure_log`.
#[allow(clippy::too_many_arguments)]
pub fn verify_and_repair(
    llm: &LlmClient,
    db: &DatabaseProfile,
    schema: &SchemaText,
    q: &NLQuery,
    sql: String,
    cfg: &PipelineConfig,
    ledger: &CallLedger,
    failure_log: &FailureLog,
) -> Result<VerificationOutcome, PipelineError> {
    verify_inner(llm, db, schema, None, q, sql, cfg, ledger, failure_log)
}

/// Generation followed by verification.
pub fn answer(
    llm: &LlmClient,
    db: &DatabaseProfile,
    hints: &HintSet,
    q: &NLQuery,
    cfg: &PipelineConfig,
    ledger: &CallLedger,
    failure_log: &FailureLog,
) -> Result<AnswerRecord, PipelineError> {
    let schema = match &db.ddl {
        Some(s) => s.clone(),
        None => extract_ddl(db)?,
    };
    let sql = generate_sql(llm, &schema, hints, q, cfg, ledger)?;
    let outcome = verify_inner(llm, db, &schema, Some(hints), q, sql, cfg, ledger, failure_log)?;
    let final_sql = outcome
        .attempts()
        .last()
        .map(|a| a.sql.clone())
        .unwrap_or_default();
    Ok(AnswerRecord {
        query: q.clone(),
        hints_used: HintsRef::of(hints),
        outcome,
        final_sql,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::Purpose;
    use crate::llm::{ScriptStep, ScriptedProvider};
    use crate::model::{Hint, HintStatus};
    use std::sync::Arc;

    fn fixture() -> (tempfile::TempDir, DatabaseProfile) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.sqlite");
        let conn = rusqlite::Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE account (account_id INTEGER PRIMARY KEY, district_id INTEGER, date TEXT);
             CREATE TABLE trans (trans_id INTEGER PRIMARY KEY, account_id INTEGER, amount INTEGER, date TEXT);
             INSERT INTO account VALUES (1, 1, '1995-03-24');
             INSERT INTO trans VALUES (1, 1, 840, '1998-10-14');",
        )
        .unwrap();
        (dir, DatabaseProfile::new("fin", path))
    }

    fn client(steps: Vec<ScriptStep>) -> LlmClient {
        LlmClient::new(Arc::new(ScriptedProvider::new(steps)), "test")
    }

    fn question() -> NLQuery {
        NLQuery {
            id: "q1".into(),
            db_id: "fin".into(),
            question: "When was the account with a 840 transaction on 1998-10-14 opened?".into(),
            evidence: Some("amount is in CZK".into()),
        }
    }

    fn hint_set() -> HintSet {
        let mut h = Hint::new("Join accounts with transactions", "SELECT T1.date FROM account AS T1 JOIN trans AS T2 USING (account_id)");
        h.status = HintStatus::Valid;
        HintSet { hints: vec![h], ..HintSet::empty("fin") }
    }

    #[test]
    fn generation_prompt_has_full_schema_hints_and_question() {
        let (_d, db) = fixture();
        let schema = extract_ddl(&db).unwrap();
        let llm = client(vec![]);
        let req = generation_request(&llm, &schema, &hint_set(), &question(), &PipelineConfig::default()).unwrap();
        let text = &req.messages[0].content;
        for stmt in schema.statements() {
            assert!(text.contains(stmt.as_str()));
        }
        assert!(text.contains("\"description\": \"Join accounts with transactions\""));
        assert!(text.contains(&question().question));
        assert!(!text.contains("CZK"), "evidence is off by default");

        let cfg = PipelineConfig { include_evidence: true, ..PipelineConfig::default() };
        let req = generation_request(&llm, &schema, &hint_set(), &question(), &cfg).unwrap();
        assert!(req.messages[0].content.contains("### Evidence\namount is in CZK"));
    }

    #[test]
    fn empty_hints_get_explicit_marker() {
        let (_d, db) = fixture();
        let schema = extract_ddl(&db).unwrap();
        let llm = client(vec![ScriptStep::respond("```sql\nSELECT 1\n```").when_contains(NO_HINTS)]);
        let ledger = CallLedger::new();
        let sql = generate_sql(&llm, &schema, &HintSet::empty("fin"), &question(), &PipelineConfig::default(), &ledger).unwrap();
        assert_eq!(sql, "SELECT 1");
        assert_eq!(ledger.get(Purpose::Generation), 1);
    }

    #[test]
    fn empty_schema_is_rejected() {
        let llm = client(vec![]);
        let err = generate_sql(&llm, &SchemaText::new(vec![]), &HintSet::empty("x"), &question(), &PipelineConfig::default(), &CallLedger::new())
            .unwrap_err();
        assert!(matches!(err, PipelineError::EmptySchema(_)));
    }

    #[test]
    fn valid_sql_needs_no_repair() {
        let (_d, db) = fixture();
        let schema = extract_ddl(&db).unwrap();
        let ledger = CallLedger::new();
        let log = FailureLog::in_memory();
        let out = verify_and_repair(&client(vec![]), &db, &schema, &question(), "SELECT date FROM account".into(), &PipelineConfig::default(), &ledger, &log).unwrap();
        assert!(out.is_success());
        assert_eq!(out.attempts().len(), 1);
        assert_eq!(ledger.total(), 0);
    }

    #[test]
    fn one_repair() {
        let (_d, db) = fixture();
        let schema = extract_ddl(&db).unwrap();
        let llm = client(vec![ScriptStep::respond("SELECT date FROM account")
            .for_purpose(Purpose::Repair)
            .when_contains("no such column: opened")]);
        let ledger = CallLedger::new();
        let log = FailureLog::in_memory();
        let out = verify_and_repair(&llm, &db, &schema, &question(), "SELECT opened FROM account".into(), &PipelineConfig::default(), &ledger, &log).unwrap();
        assert!(out.is_success());
        assert_eq!(out.attempts().len(), 2);
        assert_eq!(out.attempts()[1].index, 1);
        assert_eq!(ledger.get(Purpose::Repair), 1);
        assert!(log.is_empty());
    }

    #[test]
    fn exhausts_after_c_repairs() {
        let (_d, db) = fixture();
        let schema = extract_ddl(&db).unwrap();
        let llm = client((0..3).map(|i| ScriptStep::respond(format!("SELECT broken{i} FROM account"))).collect());
        let ledger = CallLedger::new();
        let dir = tempfile::tempdir().unwrap();
        let log = FailureLog::to_file(dir.path().join("failures.jsonl"));
        let out = verify_and_repair(&llm, &db, &schema, &question(), "SELECT nope FROM account".into(), &PipelineConfig::default(), &ledger, &log).unwrap();
        let VerificationOutcome::Exhausted { attempts, last_error } = &out else { panic!("expected exhaustion") };
        assert_eq!(attempts.len(), 4);
        assert!(last_error.contains("broken2"));
        assert_eq!(ledger.get(Purpose::Repair), 3);
        let lines = std::fs::read_to_string(log.path().unwrap()).unwrap();
        assert_eq!(lines.lines().count(), 1);
        let entry: FailureEntry = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(entry.last_sql, "SELECT broken2 FROM account");
        assert_eq!(entry.query_id, "q1");
    }

    #[test]
    fn empty_model_output_is_a_syntax_error() {
        let (_d, db) = fixture();
        let schema = extract_ddl(&db).unwrap();
        let llm = client(vec![ScriptStep::respond("```sql\n```"), ScriptStep::respond("SELECT 1")]);
        let ledger = CallLedger::new();
        let out = answer(&llm, &db, &HintSet::empty("fin"), &question(), &PipelineConfig::default(), &ledger, &FailureLog::in_memory()).unwrap();
        let first = &out.attempts()[0];
        assert_eq!(first.sql, "");
        assert!(matches!(&first.outcome, AttemptOutcome::ExecError { message } if message.starts_with("syntax")));
        assert_eq!(out.attempts().len(), 2);
        let _ = schema;
    }

    #[test]
    fn provider_failure_propagates() {
        let (_d, db) = fixture();
        let llm = client(vec![ScriptStep::fail("upstream down")]);
        let err = answer(&llm, &db, &HintSet::empty("fin"), &question(), &PipelineConfig::default(), &CallLedger::new(), &FailureLog::in_memory())
            .unwrap_err();
        assert!(matches!(err, PipelineError::Provider(_)));
    }

    /// Keeps every request it forwards.
    struct Capture {
        inner: ScriptedProvider,
        seen: std::sync::Mutex<Vec<ChatRequest>>,
    }

    impl Capture {
        fn new(steps: Vec<ScriptStep>) -> Arc<Self> {
            Arc::new(Self { inner: ScriptedProvider::new(steps), seen: Default::default() })
        }

        fn requests(&self) -> Vec<ChatRequest> {
            self.seen.lock().unwrap().clone()
        }
    }

    impl crate::llm::LlmProvider for Capture {
        fn send(&self, req: &ChatRequest) -> Result<String, LlmError> {
            self.seen.lock().unwrap().push(req.clone());
            self.inner.send(req)
        }

        fn name(&self) -> &str {
            "capture"
        }
    }

    #[test]
    fn repair_prompt_contents() {
        let (_d, db) = fixture();
        let steps = || {
            vec![
                ScriptStep::respond("SELECT opened FROM account"),
                ScriptStep::respond("SELECT date FROM account").for_purpose(Purpose::Repair),
            ]
        };
        // Hints stay out of the repair prompt unless asked for.
        let recorder = Capture::new(steps());
        let llm = LlmClient::new(recorder.clone(), "test");
        answer(&llm, &db, &hint_set(), &question(), &PipelineConfig::default(), &CallLedger::new(), &FailureLog::in_memory()).unwrap();
        let entries = recorder.requests();
        let repair = entries[1].user_text();
        assert!(repair.contains("SELECT opened FROM account"));
        assert!(repair.contains("no such column: opened"));
        assert!(repair.contains(&question().question));
        assert!(repair.contains("CREATE TABLE account"));
        assert!(!repair.contains("Join accounts with transactions"));

        let recorder = Capture::new(steps());
        let llm = LlmClient::new(recorder.clone(), "test");
        let cfg = PipelineConfig { hints_in_repair: true, ..PipelineConfig::default() };
        answer(&llm, &db, &hint_set(), &question(), &cfg, &CallLedger::new(), &FailureLog::in_memory()).unwrap();
        assert!(recorder.requests()[1].user_text().contains("### Hints\n[\n    {\n        \"description\": \"Join accounts with transactions\""));
    }

    #[test]
    fn baseline_and_hinted_runs_differ_only_in_prompt() {
        let (_d, db) = fixture();
        let steps = || {
            vec![
                ScriptStep::respond("SELECT opened FROM account"),
                ScriptStep::respond("SELECT date FROM account"),
            ]
        };
        let run = |hints: &HintSet| {
            let ledger = CallLedger::new();
            let rec = answer(&client(steps()), &db, hints, &question(), &PipelineConfig::default(), &ledger, &FailureLog::in_memory()).unwrap();
            let trace: Vec<_> = rec.attempts().iter().map(|a| (a.index, a.sql.clone(), a.outcome.clone())).collect();
            (trace, rec.final_sql, ledger.snapshot())
        };
        assert_eq!(run(&HintSet::empty("fin")), run(&hint_set()));
    }

    #[test]
    fn ledger_tracks_attempts() {
        let (_d, db) = fixture();
        for fixes_after in 0..=4usize {
            let mut steps = vec![ScriptStep::respond("SELECT bad FROM account")];
            for i in 0..3 {
                let sql = if i + 1 == fixes_after { "SELECT 1" } else { "SELECT bad FROM account" };
                steps.push(ScriptStep::respond(sql));
            }
            if fixes_after == 0 {
                steps[0] = ScriptStep::respond("SELECT 1");
            }
            let ledger = CallLedger::new();
            let log = FailureLog::in_memory();
            let rec = answer(&client(steps), &db, &HintSet::empty("fin"), &question(), &PipelineConfig::default(), &ledger, &log).unwrap();
            assert_eq!(ledger.get(Purpose::Generation), 1);
            assert_eq!(ledger.get(Purpose::Repair), rec.attempts().len() as u64 - 1);
            assert!(rec.attempts().len() <= 4);
            assert_eq!(rec.outcome.is_success(), log.is_empty());
            assert_eq!(rec.final_sql, rec.attempts().last().unwrap().sql);
        }
    }
}

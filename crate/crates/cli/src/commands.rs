//! Subcommand bodies. Each writes to the given output and reports its exit
//! status through [`Failure`].

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hisql_core::db::{execute_readonly, extract_ddl};
use hisql_core::eval::{render_markdown, run_benchmark, BenchOptions, DatasetSpec, Mode, RunReport};
use hisql_core::hints::{curate_hints, write_hint_set, CurationCounts, CurationError, HistoryEntry};
use hisql_core::pipeline::{answer, generation_request, FailureLog};
use hisql_core::{AttemptOutcome, CallLedger, HintSet, LedgerSnapshot, NLQuery, VerificationOutcome};

use crate::app::{App, RegisteredDb};

/// Rows printed by `ask`.
const ASK_DISPLAY_ROWS: usize = 50;

#[derive(Debug)]
pub enum Failure {
    /// Bad input or unknown names; exit status 2.
    Usage(String),
    /// The command ran and failed; exit status 1.
    Failed(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Failed(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Failed(m) => m,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Failed(format!("{e:#}"))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Failed(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

fn lookup<'a>(app: &'a App, db_id: &str) -> Result<&'a RegisteredDb, Failure> {
    app.database(db_id).ok_or_else(|| {
        let known: Vec<&str> = app.databases.keys().map(String::as_str).collect();
        Failure::Usage(format!("unknown database {db_id:?}; registered: {}", known.join(", ")))
    })
}

pub fn format_ledger(l: &LedgerSnapshot) -> String {
    format!(
        "hint_curation={} hint_repair={} generation={} repair={} total={}",
        l.hint_curation,
        l.hint_repair,
        l.generation,
        l.repair,
        l.total()
    )
}

pub fn curate(app: &App, db_id: &str, history_file: &Path, out: Option<&Path>, w: &mut dyn Write) -> CmdResult {
    let db = lookup(app, db_id)?;
    let text = std::fs::read_to_string(history_file)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", history_file.display())))?;
    let history: Vec<HistoryEntry> = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{} is not a JSON array of history entries: {e}", history_file.display())))?;

    let ledger = CallLedger::new();
    let set = match curate_hints(&app.llm, &db.profile, &history, &app.config.pipeline, &ledger) {
        Ok(set) => set,
        Err(e @ (CurationError::EmptyHistory | CurationError::EmptyHistorySql(_))) => {
            return Err(Failure::Usage(e.to_string()))
        }
        Err(e) => {
            writeln!(w, "ledger: {}", format_ledger(&ledger.snapshot()))?;
            return Err(Failure::Failed(format!("curation failed: {e}")));
        }
    };
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| db.hints_path.clone());
    write_hint_set(&path, &set).context("cannot write hint file")?;

    let c = CurationCounts::of(&set);
    writeln!(
        w,
        "proposed={} valid={} repaired={} dropped={}",
        c.proposed, c.valid, c.repaired, c.dropped
    )?;
    for h in set.dropped() {
        writeln!(w, "dropped: {} ({})", h.description, h.last_error.as_deref().unwrap_or("unknown error"))?;
    }
    writeln!(w, "ledger: {}", format_ledger(&ledger.snapshot()))?;
    writeln!(w, "wrote {}", path.display())?;
    Ok(())
}

pub struct AskArgs<'a> {
    pub db_id: &'a str,
    pub question: &'a str,
    pub evidence: Option<&'a str>,
    pub no_hints: bool,
    pub dump_prompt: bool,
}

pub fn ask(app: &App, args: &AskArgs<'_>, w: &mut dyn Write) -> CmdResult {
    let db = lookup(app, args.db_id)?;
    let hints = if args.no_hints {
        HintSet::empty(args.db_id)
    } else {
        db.load_hints()?.unwrap_or_else(|| HintSet::empty(args.db_id))
    };
    let q = NLQuery {
        id: "cli".into(),
        db_id: args.db_id.into(),
        question: args.question.into(),
        evidence: args.evidence.map(str::to_string),
    };
    let cfg = &app.config.pipeline;

    if args.dump_prompt {
        let schema = extract_ddl(&db.profile).context("cannot read schema")?;
        let req = generation_request(&app.llm, &schema, &hints, &q, cfg).map_err(anyhow::Error::from)?;
        for m in &req.messages {
            writeln!(w, "{}", m.content)?;
        }
        return Ok(());
    }

    let ledger = CallLedger::new();
    let rec = answer(&app.llm, &db.profile, &hints, &q, cfg, &ledger, &app.failure_log)
        .map_err(|e| Failure::Failed(format!("pipeline failed: {e}")))?;
    for a in rec.attempts() {
        match &a.outcome {
            AttemptOutcome::Success => writeln!(w, "attempt {}: success", a.index)?,
            AttemptOutcome::ExecError { message } => writeln!(w, "attempt {}: error: {message}", a.index)?,
        }
        writeln!(w, "    {}", a.sql.replace('\n', "\n    "))?;
    }
    writeln!(w, "final SQL:\n{}", rec.final_sql)?;
    writeln!(w, "ledger: {}", format_ledger(&ledger.snapshot()))?;
    match &rec.outcome {
        VerificationOutcome::Success { result, .. } => {
            writeln!(w)?;
            write!(w, "{}", result.render_text(ASK_DISPLAY_ROWS))?;
            Ok(())
        }
        VerificationOutcome::Exhausted { attempts, last_error } => {
            let log = app
                .failure_log
                .path()
                .map_or_else(|| "(in memory)".to_string(), |p| p.display().to_string());
            Err(Failure::Failed(format!(
                "no working SQL after {} attempts: {last_error}\nfailure logged to {log}",
                attempts.len()
            )))
        }
    }
}

pub struct BenchArgs<'a> {
    pub dataset: &'a Path,
    pub mode: Mode,
    pub seed: Option<u64>,
    pub workers: usize,
    pub report_dir: &'a Path,
}

/// Runs the benchmark and writes `report.json` and `report.md`.
pub fn bench(app: &App, args: &BenchArgs<'_>, w: &mut dyn Write) -> Result<RunReport, Failure> {
    let spec = DatasetSpec::from_file(args.dataset).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut cfg = app.config.pipeline.clone();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(args.report_dir)
        .with_context(|| format!("cannot create {}", args.report_dir.display()))?;
    let failures = FailureLog::to_file(args.report_dir.join("failures.jsonl"));
    let opts = BenchOptions { mode: args.mode, workers: args.workers.max(1) };
    let report = run_benchmark(&spec, &app.llm, &cfg, opts, &failures).map_err(|e| Failure::Usage(e.to_string()))?;

    let json_path = args.report_dir.join("report.json");
    let md_path = args.report_dir.join("report.md");
    std::fs::write(&json_path, report.to_json()).with_context(|| format!("cannot write {}", json_path.display()))?;
    std::fs::write(&md_path, render_markdown(&report)).with_context(|| format!("cannot write {}", md_path.display()))?;

    let total = report.ea_total.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v));
    writeln!(
        w,
        "mode={} items={} evaluated={} matches={} ea_total={total}",
        report.mode.as_str(),
        report.counts.items,
        report.counts.evaluated,
        report.counts.matches,
    )?;
    writeln!(w, "ledger: {}", format_ledger(&report.ledger))?;
    writeln!(
        w,
        "call bound: {} (C x N + S = {})",
        if report.call_bound.ok { "ok" } else { "violated" },
        report.call_bound.cn_plus_s
    )?;
    writeln!(w, "wrote {} and {}", json_path.display(), md_path.display())?;
    Ok(report)
}

/// Re-executes every stored hint of a database.
pub fn verify_hints(app: &App, db_id: &str, file: Option<PathBuf>, w: &mut dyn Write) -> CmdResult {
    let db = lookup(app, db_id)?;
    let db = RegisteredDb {
        hints_path: file.unwrap_or_else(|| db.hints_path.clone()),
        ..db.clone()
    };
    let set = db
        .load_hints()?
        .ok_or_else(|| Failure::Usage(format!("no hint file at {}", db.hints_path.display())))?;
    let limits = app.config.pipeline.exec_limits();
    let mut failed = 0;
    for (i, h) in set.kept().enumerate() {
        match execute_readonly(&db.profile, &h.sql_query, &limits) {
            Ok(_) => writeln!(w, "[{i}] ok: {}", h.description)?,
            Err(e) => {
                failed += 1;
                writeln!(w, "[{i}] FAIL: {}: {e}", h.description)?;
            }
        }
    }
    writeln!(w, "{} of {} hints execute", set.kept_len() - failed, set.kept_len())?;
    if failed > 0 {
        return Err(Failure::Failed(format!("{failed} hint(s) fail to execute")));
    }
    Ok(())
}

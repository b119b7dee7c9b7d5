//! Execution-accuracy benchmarking.
//!
//! A run splits a dataset into query history and test items per database,
//! curates hints from the history (HI-SQL mode only), answers every test
//! item and compares its result with the gold query's.

mod bound;
mod dataset;
mod report;
mod split;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::Utc;

use crate::config::PipelineConfig;
use crate::db::{ea_match, execute_readonly, extract_ddl, EaOutcome, ExecError, ExecErrorKind, ExecLimits, NormalizeOptions};
use crate::hints::{curate_hints, CurationCounts, HistoryEntry};
use crate::ledger::CallLedger;
use crate::llm::LlmClient;
use crate::model::{BenchmarkItem, DatabaseProfile, HintSet, VerificationOutcome};
use crate::pipeline::{answer, FailureLog};

pub use bound::{check_call_bound, CallBound};
pub use dataset::{
    load_dataset, locate_database, parse_records, resolve_databases, Dataset, DatasetError,
    DatasetSpec, FieldMap, Rejection,
};
pub use report::{
    aggregate, render_markdown, BucketRow, EaMark, HintSummary, ItemOutcome, ItemRecord, Mode,
    RunCounts, RunReport,
};
pub use split::{compare_ids, history_size, split_hint_history, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub mode: Mode,
    pub workers: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { mode: Mode::Hisql, workers: 1 }
    }
}

/// Loads the dataset and runs it. Only load failures are errors; per-item
/// failures end up in the report.
pub fn run_benchmark(
    spec: &DatasetSpec,
    llm: &LlmClient,
    cfg: &PipelineConfig,
    opts: BenchOptions,
    failure_log: &FailureLog,
) -> Result<RunReport, DatasetError> {
    let ds = load_dataset(spec)?;
    let dbs = resolve_databases(&spec.db_root, &ds.items)?;
    let mut report = run_items(&ds.items, &dbs, llm, cfg, opts, failure_log);
    report.counts.rejected_records = ds.rejected.len();
    Ok(report)
}

fn with_schema(db: &DatabaseProfile) -> Result<DatabaseProfile, String> {
    let mut db = db.clone();
    if db.ddl.is_none() {
        db.ddl = Some(extract_ddl(&db).map_err(|e| e.to_string())?);
    }
    Ok(db)
}

fn curate_all(
    history: &[BenchmarkItem],
    dbs: &BTreeMap<String, Result<DatabaseProfile, String>>,
    llm: &LlmClient,
    cfg: &PipelineConfig,
    ledger: &CallLedger,
) -> (BTreeMap<String, HintSet>, Vec<HintSummary>) {
    let mut sets = BTreeMap::new();
    let mut summaries = Vec::new();
    for (db_id, db) in dbs {
        let entries: Vec<HistoryEntry> = history
            .iter()
            .filter(|i| &i.query.db_id == db_id)
            .map(|i| HistoryEntry {
                id: i.query.id.clone(),
                question: Some(i.query.question.clone()),
                sql: i.gold_sql.clone(),
            })
            .collect();
        if entries.is_empty() {
            continue;
        }
        let source_query_ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
        let result = match db {
            Ok(db) => curate_hints(llm, db, &entries, cfg, ledger).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        let (set, error) = match result {
            Ok(set) => (set, None),
            Err(e) => {
                log::warn!("hint curation for {db_id} failed, continuing without hints: {e}");
                (HintSet::empty(db_id.clone()), Some(e))
            }
        };
        summaries.push(HintSummary {
            db_id: db_id.clone(),
            source_query_ids,
            counts: CurationCounts::of(&set),
            error,
            hints: set.hints.clone(),
        });
        sets.insert(db_id.clone(), set);
    }
    (sets, summaries)
}

/// `None` if the gold query runs within limits, else why it does not.
fn gold_problem(db: &DatabaseProfile, gold_sql: &str, limits: &ExecLimits) -> Option<ExecError> {
    match execute_readonly(db, gold_sql, limits) {
        Ok(t) if t.truncated => Some(ExecError::new(
            ExecErrorKind::RowCapExceeded,
            format!("result exceeds the row cap of {}", limits.row_cap),
        )),
        Ok(_) => None,
        Err(e) => Some(e),
    }
}

fn not_evaluated(gold: ExecError) -> (report::EaMark, Option<String>) {
    (EaMark::NotEvaluated, Some(format!("gold query failed: {gold}")))
}

fn evaluate(
    item: &BenchmarkItem,
    db: Option<&Result<DatabaseProfile, String>>,
    hints: &HintSet,
    llm: &LlmClient,
    cfg: &PipelineConfig,
    ledger: &CallLedger,
    failure_log: &FailureLog,
) -> ItemRecord {
    let mut record = ItemRecord {
        id: item.query.id.clone(),
        db_id: item.query.db_id.clone(),
        difficulty: item.difficulty,
        attempts: 0,
        outcome: ItemOutcome::Error,
        final_sql: String::new(),
        error: None,
        ea: EaMark::NotEvaluated,
        ea_detail: None,
    };
    let db = match db {
        Some(Ok(db)) => db,
        Some(Err(e)) => {
            record.error = Some(e.clone());
            return record;
        }
        None => {
            record.error = Some(format!("database {} is not registered", item.query.db_id));
            return record;
        }
    };
    let limits = cfg.exec_limits();
    let opts = NormalizeOptions { fold_integral_reals: cfg.fold_integral_reals };
    let failed = |record: &mut ItemRecord| {
        (record.ea, record.ea_detail) = match gold_problem(db, &item.gold_sql, &limits) {
            Some(gold) => not_evaluated(gold),
            None => (EaMark::Mismatch, None),
        };
    };
    match answer(llm, db, hints, &item.query, cfg, ledger, failure_log) {
        Err(e) => {
            record.error = Some(e.to_string());
            failed(&mut record);
        }
        Ok(ans) => {
            record.attempts = ans.attempts().len() as u32;
            record.final_sql = ans.final_sql.clone();
            match &ans.outcome {
                VerificationOutcome::Success { .. } => {
                    record.outcome = ItemOutcome::Success;
                    (record.ea, record.ea_detail) =
                        match ea_match(db, &ans.final_sql, &item.gold_sql, &limits, cfg.comparison, opts) {
                            EaOutcome::Match => (EaMark::Match, None),
                            EaOutcome::Mismatch => (EaMark::Mismatch, Some("results differ".into())),
                            EaOutcome::PredError { error } => {
                                (EaMark::Mismatch, Some(format!("prediction failed: {error}")))
                            }
                            EaOutcome::GoldError { error } => not_evaluated(error),
                        };
                }
                VerificationOutcome::Exhausted { last_error, .. } => {
                    record.outcome = ItemOutcome::Exhausted;
                    record.error = Some(last_error.clone());
                    failed(&mut record);
                }
            }
        }
    }
    record
}

/// Runs already-loaded items. `dbs` must cover every item's database;
/// items of unknown databases are recorded as errors.
pub fn run_items(
    items: &[BenchmarkItem],
    dbs: &BTreeMap<String, DatabaseProfile>,
    llm: &LlmClient,
    cfg: &PipelineConfig,
    opts: BenchOptions,
    failure_log: &FailureLog,
) -> RunReport {
    let ledger = CallLedger::new();
    let split = split_hint_history(items, cfg.split_ratio, cfg.seed);
    let dbs: BTreeMap<String, Result<DatabaseProfile, String>> =
        dbs.iter().map(|(k, v)| (k.clone(), with_schema(v))).collect();

    let (hint_sets, summaries) = match opts.mode {
        Mode::Hisql => curate_all(&split.history, &dbs, llm, cfg, &ledger),
        Mode::Baseline => (BTreeMap::new(), Vec::new()),
    };
    let s: u64 = summaries
        .iter()
        .flat_map(|h| &h.hints)
        .map(|h| u64::from(h.repair_count))
        .sum();

    let test = &split.test;
    let slots: Mutex<Vec<Option<ItemRecord>>> = Mutex::new(vec![None; test.len()]);
    let next = AtomicUsize::new(0);
    let workers = opts.workers.clamp(1, test.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = test.get(i) else { break };
                let empty = HintSet::empty(item.query.db_id.clone());
                let hints = hint_sets.get(&item.query.db_id).unwrap_or(&empty);
                let rec = evaluate(item, dbs.get(&item.query.db_id), hints, llm, cfg, &ledger, failure_log);
                slots.lock().expect("record slots poisoned")[i] = Some(rec);
            });
        }
    });
    let records: Vec<ItemRecord> = slots
        .into_inner()
        .expect("record slots poisoned")
        .into_iter()
        .map(|r| r.expect("every test item is evaluated"))
        .collect();

    let (ea_by_difficulty, ea_total) = aggregate(&records);
    let counts = RunCounts {
        items: records.len(),
        history: split.history.len(),
        rejected_records: 0,
        evaluated: records.iter().filter(|r| r.ea.counts_as().is_some()).count(),
        matches: records.iter().filter(|r| r.ea == EaMark::Match).count(),
        not_evaluated: records.iter().filter(|r| r.ea == EaMark::NotEvaluated).count(),
        exhausted: records.iter().filter(|r| r.outcome == ItemOutcome::Exhausted).count(),
        errors: records.iter().filter(|r| r.outcome == ItemOutcome::Error).count(),
    };
    let ledger = ledger.snapshot();
    let call_bound = check_call_bound(
        &ledger,
        records.len() as u64,
        u64::from(cfg.max_repairs),
        s,
        summaries.len() as u64,
    );
    RunReport {
        mode: opts.mode,
        config: cfg.clone(),
        counts,
        ea_total,
        ea_by_difficulty,
        ledger,
        call_bound,
        hints: summaries,
        records,
        created_at: Utc::now(),
    }
}

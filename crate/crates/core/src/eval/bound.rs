//! Checks a finished run's call ledger against the expected call budget.

use serde::{Deserialize, Serialize};

use crate::ledger::LedgerSnapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallBound {
    pub ok: bool,
    pub violations: Vec<String>,
    /// `C * N + S`: repair calls plus hint repairs, the published budget.
    pub cn_plus_s: u64,
    /// Every call the ledger saw, curation and generation included.
    pub ledger_total: u64,
    /// `(1 + C) * N`, the ceiling on generation plus repair calls.
    pub query_call_ceiling: u64,
    pub n: u64,
    pub c: u64,
    pub s: u64,
}

/// `n` is the test-set size, `c` the repair budget per query, `s` the number
/// of hint repairs performed during curation and `databases` the number of
/// curated databases.
pub fn check_call_bound(ledger: &LedgerSnapshot, n: u64, c: u64, s: u64, databases: u64) -> CallBound {
    let mut violations = Vec::new();
    if ledger.repair > c * n {
        violations.push(format!("repair calls {} exceed C x N = {}", ledger.repair, c * n));
    }
    if ledger.generation != n {
        violations.push(format!("generation calls {} differ from N = {n}", ledger.generation));
    }
    if ledger.hint_repair != s {
        violations.push(format!("hint repair calls {} differ from S = {s}", ledger.hint_repair));
    }
    if ledger.hint_curation > 2 * databases {
        violations.push(format!(
            "hint curation calls {} exceed 2 per database ({databases} databases)",
            ledger.hint_curation
        ));
    }
    CallBound {
        ok: violations.is_empty(),
        violations,
        cn_plus_s: c * n + s,
        ledger_total: ledger.total(),
        query_call_ceiling: (1 + c) * n,
        n,
        c,
        s,
    }
}

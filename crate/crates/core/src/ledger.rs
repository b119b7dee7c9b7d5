//! Counting of logical LLM calls by purpose.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    HintCuration,
    HintRepair,
    Generation,
    Repair,
}

impl Purpose {
    pub const ALL: [Purpose; 4] = [
        Purpose::HintCuration,
        Purpose::HintRepair,
        Purpose::Generation,
        Purpose::Repair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::HintCuration => "hint_curation",
            Purpose::HintRepair => "hint_repair",
            Purpose::Generation => "generation",
            Purpose::Repair => "repair",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Monotone per-purpose call counters, safe to bump from many workers.
#[derive(Debug, Default)]
pub struct CallLedger {
    counts: [AtomicU64; 4],
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, purpose: Purpose) {
        self.counts[purpose.slot()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, purpose: Purpose) -> u64 {
        self.counts[purpose.slot()].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        Purpose::ALL.iter().map(|p| self.get(*p)).sum()
    }

    /// Adds every count of `other` into `self`.
    pub fn absorb(&self, other: &CallLedger) {
        for p in Purpose::ALL {
            self.counts[p.slot()].fetch_add(other.get(p), Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            hint_curation: self.get(Purpose::HintCuration),
            hint_repair: self.get(Purpose::HintRepair),
            generation: self.get(Purpose::Generation),
            repair: self.get(Purpose::Repair),
        }
    }
}

impl Clone for CallLedger {
    fn clone(&self) -> Self {
        CallLedger::from(self.snapshot())
    }
}

impl PartialEq for CallLedger {
    fn eq(&self, other: &Self) -> bool {
        self.snapshot() == other.snapshot()
    }
}

impl Serialize for CallLedger {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.snapshot().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CallLedger {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        LedgerSnapshot::deserialize(d).map(CallLedger::from)
    }
}

/// Plain copy of a ledger at one point in time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    #[serde(default)]
    pub hint_curation: u64,
    #[serde(default)]
    pub hint_repair: u64,
    #[serde(default)]
    pub generation: u64,
    #[serde(default)]
    pub repair: u64,
}

impl LedgerSnapshot {
    pub fn total(&self) -> u64 {
        self.hint_curation + self.hint_repair + self.generation + self.repair
    }
}

impl From<LedgerSnapshot> for CallLedger {
    fn from(s: LedgerSnapshot) -> Self {
        let l = CallLedger::new();
        l.counts[Purpose::HintCuration.slot()].store(s.hint_curation, Ordering::Relaxed);
        l.counts[Purpose::HintRepair.slot()].store(s.hint_repair, Ordering::Relaxed);
        l.counts[Purpose::Generation.slot()].store(s.generation, Ordering::Relaxed);
        l.counts[Purpose::Repair.slot()].store(s.repair, Ordering::Relaxed);
        l
    }
}

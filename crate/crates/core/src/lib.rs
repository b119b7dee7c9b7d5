//! Hint-conditioned text-to-SQL.
//!
//! The crate covers the whole offline-capable pipeline:
//!
//! * [`hints`] mines a per-database set of validated `(description, sql_query)`
//!   exemplars from a log of historical queries with a single model call,
//!   repairing exemplars that fail to execute;
//! * [`pipeline`] generates SQL for a question from the full schema plus
//!   those hints, then runs an execute-and-repair loop with a bounded number
//!   of retries;
//! * [`eval`] measures execution accuracy on BIRD/Spider-shaped datasets
//!   and accounts for every model call;
//! * [`db`] owns all contact with SQLite, always read-only.
//!
//! Model access goes through [`llm`], which offers an OpenAI-compatible HTTP
//! provider plus scripted and replay providers for deterministic runs.

pub mod config;
pub mod db;
pub mod eval;
pub mod hints;
pub mod ledger;
pub mod llm;
pub mod model;
pub mod pipeline;

pub use config::PipelineConfig;
pub use ledger::{CallLedger, LedgerSnapshot, Purpose};
pub use model::*;

//! On-disk hint files.
//!
//! `hints/<db_id>.json` holds only the interchange array of
//! `{"description", "sql_query"}` objects. Status and provenance go to the
//! sidecar `hints/<db_id>.meta.json`, which also keeps dropped hints.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Hint, HintSet, HintStatus};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// One element of the interchange array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintFileEntry {
    pub description: String,
    pub sql_query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintSetMeta {
    pub db_id: String,
    pub created_at: DateTime<Utc>,
    pub source_query_ids: Vec<String>,
    /// Every hint, kept and dropped, with its status.
    pub hints: Vec<Hint>,
}

pub fn hint_file_path(dir: &Path, db_id: &str) -> PathBuf {
    dir.join(format!("{db_id}.json"))
}

pub fn meta_file_path(hint_file: &Path) -> PathBuf {
    hint_file.with_extension("meta.json")
}

/// The kept hints as a JSON array indented with four spaces.
pub fn render_hint_array(set: &HintSet) -> String {
    let entries: Vec<HintFileEntry> = set
        .kept()
        .map(|h| HintFileEntry {
            description: h.description.clone(),
            sql_query: h.sql_query.clone(),
        })
        .collect();
    let mut buf = Vec::new();
    let fmt = serde_json::ser::PrettyFormatter::with_indent(b"    ");
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    entries
        .serialize(&mut ser)
        .expect("hint entries serialize");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

fn write(path: &Path, text: &str) -> Result<(), StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| StoreError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the hint file and its sidecar; returns the hint file path.
pub fn write_hint_set(path: &Path, set: &HintSet) -> Result<PathBuf, StoreError> {
    let mut text = render_hint_array(set);
    text.push('\n');
    write(path, &text)?;
    let meta = HintSetMeta {
        db_id: set.db_id.clone(),
        created_at: set.created_at,
        source_query_ids: set.source_query_ids.clone(),
        hints: set.hints.clone(),
    };
    let mut meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_text.push('\n');
    write(&meta_file_path(path), &meta_text)?;
    Ok(path.to_path_buf())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a hint file. Without a sidecar, every entry is taken as valid and
/// the db id comes from the file name.
pub fn load_hint_set(path: &Path) -> Result<HintSet, StoreError> {
    let entries: Vec<HintFileEntry> = read_json(path)?;
    let meta_path = meta_file_path(path);
    let meta: Option<HintSetMeta> = if meta_path.exists() {
        Some(read_json(&meta_path)?)
    } else {
        None
    };
    let hints = entries
        .into_iter()
        .map(|e| {
            let known = meta.as_ref().and_then(|m| {
                m.hints
                    .iter()
                    .find(|h| h.status.is_kept() && h.sql_query == e.sql_query && h.description == e.description)
            });
            match known {
                Some(h) => h.clone(),
                None => Hint {
                    status: HintStatus::Valid,
                    ..Hint::new(e.description, e.sql_query)
                },
            }
        })
        .collect();
    let stem = path
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.trim_end_matches(".json").to_string())
        .unwrap_or_default();
    Ok(match meta {
        Some(m) => HintSet {
            db_id: m.db_id,
            hints,
            source_query_ids: m.source_query_ids,
            created_at: m.created_at,
        },
        None => HintSet {
            hints,
            ..HintSet::empty(stem)
        },
    })
}

/// At most one curation in flight per database.
#[derive(Debug, Clone, Default)]
pub struct CurationLocks {
    active: Arc<Mutex<HashSet<String>>>,
}

/// Releases the database's curation slot on drop.
#[derive(Debug)]
pub struct CurationGuard {
    active: Arc<Mutex<HashSet<String>>>,
    db_id: String,
}

impl CurationLocks {
    pub fn new() -> Self {
        Self::default()
    }

    /// `None` if a curation for `db_id` is already running.
    pub fn try_acquire(&self, db_id: &str) -> Option<CurationGuard> {
        let mut active = self.active.lock().expect("curation locks poisoned");
        if !active.insert(db_id.to_string()) {
            return None;
        }
        Some(CurationGuard {
            active: Arc::clone(&self.active),
            db_id: db_id.to_string(),
        })
    }
}

impl Drop for CurationGuard {
    fn drop(&mut self) {
        if let Ok(mut active) = self.active.lock() {
            active.remove(&self.db_id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> HintSet {
        let mut a = Hint::new(
            "Join accounts with transactions to find the account opening date for a specific transaction amount and date.",
            "SELECT T1.date FROM account AS T1 INNER JOIN trans AS T2 ON T1.account_id = T2.account_id WHERE T2.amount = 840 AND T2.date = '1998-10-14'",
        );
        a.status = HintStatus::Valid;
        let mut b = Hint::new("Broken", "SELECT nope");
        b.status = HintStatus::Dropped;
        b.repair_count = 2;
        b.last_error = Some("no such column: nope".into());
        HintSet {
            db_id: "financial".into(),
            hints: vec![a, b],
            source_query_ids: vec!["7".into(), "9".into()],
            created_at: "2026-01-02T03:04:05Z".parse().unwrap(),
        }
    }

    #[test]
    fn interchange_format_is_exact() {
        let text = render_hint_array(&sample_set());
        let expected = "[\n    {\n        \"description\": \"Join accounts with transactions to find the account opening date for a specific transaction amount and date.\",\n        \"sql_query\": \"SELECT T1.date FROM account AS T1 INNER JOIN trans AS T2 ON T1.account_id = T2.account_id WHERE T2.amount = 840 AND T2.date = '1998-10-14'\"\n    }\n]";
        assert_eq!(text, expected);
    }

    #[test]
    fn write_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = hint_file_path(dir.path(), "financial");
        let set = sample_set();
        write_hint_set(&path, &set).unwrap();

        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(raw.as_array().unwrap().len(), 1, "dropped hints stay out of the hint file");
        assert_eq!(raw[0].as_object().unwrap().len(), 2);

        let meta: HintSetMeta = read_json(&meta_file_path(&path)).unwrap();
        assert_eq!(meta.hints.len(), 2);

        let back = load_hint_set(&path).unwrap();
        assert_eq!(back.db_id, "financial");
        assert_eq!(back.source_query_ids, set.source_query_ids);
        assert_eq!(back.hints, vec![set.hints[0].clone()]);
        assert_eq!(back.created_at, set.created_at);
    }

    #[test]
    fn load_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("school.json");
        std::fs::write(&path, r#"[{"description":"d","sql_query":"SELECT 1"}]"#).unwrap();
        let set = load_hint_set(&path).unwrap();
        assert_eq!(set.db_id, "school");
        assert_eq!(set.hints[0].status, HintStatus::Valid);
        assert!(set.source_query_ids.is_empty());
    }

    #[test]
    fn single_flight() {
        let locks = CurationLocks::new();
        let g = locks.try_acquire("a").unwrap();
        assert!(locks.try_acquire("a").is_none());
        assert!(locks.try_acquire("b").is_some());
        drop(g);
        assert!(locks.try_acquire("a").is_some());
    }
}

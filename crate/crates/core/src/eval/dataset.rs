//! BIRD/Spider-shaped dataset files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{difficulty_bucket, BenchmarkItem, DatabaseProfile, NLQuery};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0} must contain a JSON array of objects")]
    NotArray(PathBuf),
    #[error("dataset spec {path}: {source}")]
    Spec {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("key {key:?} ({role}) appears in none of the records")]
    UnmappedKey { key: String, role: &'static str },
    #[error("{rejected} of {total} records rejected, more than 10%; first: {first}")]
    TooManyRejected {
        rejected: usize,
        total: usize,
        first: String,
    },
    #[error("no database file for {db_id} under {root} (tried {db_id}/{db_id}.sqlite and {db_id}.sqlite)")]
    MissingDatabase { db_id: String, root: PathBuf },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
}

/// Maps dataset record keys onto item fields. Optional keys that are not
/// set are not read; by default none are set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMap {
    pub question_key: String,
    pub sql_key: String,
    pub db_id_key: String,
    pub difficulty_key: Option<String>,
    pub evidence_key: Option<String>,
    /// Without an id key, items are numbered by position.
    pub id_key: Option<String>,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            question_key: "question".into(),
            sql_key: "SQL".into(),
            db_id_key: "db_id".into(),
            difficulty_key: None,
            evidence_key: None,
            id_key: None,
        }
    }
}

impl FieldMap {
    pub fn bird() -> Self {
        Self {
            difficulty_key: Some("difficulty".into()),
            evidence_key: Some("evidence".into()),
            id_key: Some("question_id".into()),
            ..Self::default()
        }
    }

    pub fn spider() -> Self {
        Self {
            sql_key: "query".into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub db_root: PathBuf,
    #[serde(default)]
    pub field_map: FieldMap,
}

impl DatasetSpec {
    /// Reads a TOML or JSON spec. Relative paths resolve against the spec
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec: DatasetSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|source| DatasetError::Json {
                path: path.to_path_buf(),
                source,
            })?
        } else {
            toml::from_str(&text).map_err(|source| DatasetError::Spec {
                path: path.to_path_buf(),
                source,
            })?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        spec.path = base.join(&spec.path);
        spec.db_root = base.join(&spec.db_root);
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<BenchmarkItem>,
    pub rejected: Vec<Rejection>,
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) if !s.trim().is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses records into items. Records missing a question, SQL or db id are
/// rejected; more than 10% rejected fails the load.
pub fn parse_records(records: &[Value], map: &FieldMap, origin: &Path) -> Result<Dataset, DatasetError> {
    if records.is_empty() {
        log::warn!("{} contains no records", origin.display());
        return Ok(Dataset { items: Vec::new(), rejected: Vec::new() });
    }
    let mut mapped: Vec<(&str, &'static str)> = vec![
        (&map.question_key, "question_key"),
        (&map.sql_key, "sql_key"),
        (&map.db_id_key, "db_id_key"),
    ];
    for (key, role) in [
        (&map.difficulty_key, "difficulty_key"),
        (&map.evidence_key, "evidence_key"),
        (&map.id_key, "id_key"),
    ] {
        if let Some(k) = key {
            mapped.push((k, role));
        }
    }
    for (key, role) in mapped {
        let seen = records
            .iter()
            .any(|r| r.as_object().is_some_and(|o| o.contains_key(key)));
        if !seen {
            return Err(DatasetError::UnmappedKey { key: key.to_string(), role });
        }
    }

    let mut items = Vec::new();
    let mut rejected = Vec::new();
    let mut ids = BTreeSet::new();
    for (index, record) in records.iter().enumerate() {
        let Some(obj) = record.as_object() else {
            rejected.push(Rejection { index, reason: "not an object".into() });
            continue;
        };
        let required = |key: &str, what: &str| {
            text_field(obj, key).ok_or_else(|| Rejection {
                index,
                reason: format!("missing {what} ({key:?})"),
            })
        };
        let parsed = (|| {
            Ok::<_, Rejection>((
                required(&map.question_key, "question")?,
                required(&map.sql_key, "SQL")?,
                required(&map.db_id_key, "db id")?,
            ))
        })();
        let (question, gold_sql, db_id) = match parsed {
            Ok(t) => t,
            Err(r) => {
                rejected.push(r);
                continue;
            }
        };
        let id = map
            .id_key
            .as_deref()
            .and_then(|k| text_field(obj, k))
            .unwrap_or_else(|| index.to_string());
        if !ids.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        let difficulty = difficulty_bucket(
            map.difficulty_key
                .as_deref()
                .and_then(|k| obj.get(k))
                .and_then(Value::as_str),
        );
        let evidence = map.evidence_key.as_deref().and_then(|k| text_field(obj, k));
        items.push(BenchmarkItem {
            query: NLQuery { id, db_id, question, evidence },
            gold_sql,
            difficulty,
        });
    }
    if rejected.len() * 10 > records.len() {
        return Err(DatasetError::TooManyRejected {
            rejected: rejected.len(),
            total: records.len(),
            first: format!("record {}: {}", rejected[0].index, rejected[0].reason),
        });
    }
    for r in &rejected {
        log::warn!("{}: record {} rejected: {}", origin.display(), r.index, r.reason);
    }
    Ok(Dataset { items, rejected })
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(&spec.path).map_err(|source| DatasetError::Io {
        path: spec.path.clone(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: spec.path.clone(),
        source,
    })?;
    let Value::Array(records) = value else {
        return Err(DatasetError::NotArray(spec.path.clone()));
    };
    parse_records(&records, &spec.field_map, &spec.path)
}

/// Locates `<root>/<id>/<id>.sqlite` (BIRD layout) or `<root>/<id>.sqlite`.
pub fn locate_database(root: &Path, db_id: &str) -> Result<DatabaseProfile, DatasetError> {
    let nested = root.join(db_id).join(format!("{db_id}.sqlite"));
    let flat = root.join(format!("{db_id}.sqlite"));
    [nested, flat]
        .into_iter()
        .find(|p| p.is_file())
        .map(|p| DatabaseProfile::new(db_id, p))
        .ok_or_else(|| DatasetError::MissingDatabase {
            db_id: db_id.to_string(),
            root: root.to_path_buf(),
        })
}

/// Every database the items reference, keyed by id.
pub fn resolve_databases(
    root: &Path,
    items: &[BenchmarkItem],
) -> Result<BTreeMap<String, DatabaseProfile>, DatasetError> {
    let ids: BTreeSet<&str> = items.iter().map(|i| i.query.db_id.as_str()).collect();
    ids.into_iter()
        .map(|id| Ok((id.to_string(), locate_database(root, id)?)))
        .collect()
}

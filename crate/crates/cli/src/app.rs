//! Application configuration and the runtime state built from it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use hisql_core::hints::{hint_file_path, load_hint_set, CurationLocks};
use hisql_core::llm::{LlmClient, PromptSet, ProviderBinding};
use hisql_core::pipeline::FailureLog;
use hisql_core::{DatabaseProfile, HintSet, PipelineConfig};
use serde::{Deserialize, Serialize};

/// Environment variable consulted when `--config` is not given.
pub const CONFIG_ENV: &str = "HISQL_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbEntry {
    pub db_id: String,
    pub file_path: PathBuf,
    /// Defaults to `<hints_dir>/<db_id>.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hints_path: Option<PathBuf>,
}

fn default_hints_dir() -> PathBuf {
    PathBuf::from("hints")
}

fn default_failure_log() -> PathBuf {
    PathBuf::from("failures.jsonl")
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

/// Everything a command needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub provider: ProviderBinding,
    #[serde(default)]
    pub databases: Vec<DbEntry>,
    #[serde(default = "default_hints_dir")]
    pub hints_dir: PathBuf,
    #[serde(default = "default_failure_log")]
    pub failure_log: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Directory of `<template>.txt` overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    /// Static console assets served under `/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_provider(base: &Path, binding: &mut ProviderBinding) {
    match binding {
        ProviderBinding::Http(_) => {}
        ProviderBinding::Scripted { transcript_file, .. } => {
            if let Some(p) = transcript_file {
                rebase(base, p);
            }
        }
        ProviderBinding::Replay { session_file, .. } => rebase(base, session_file),
        ProviderBinding::Record { inner, session_file } => {
            rebase(base, session_file);
            rebase_provider(base, inner);
        }
    }
}

impl AppConfig {
    pub fn parse(text: &str, json: bool) -> anyhow::Result<Self> {
        Ok(if json {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text)?
        })
    }

    /// Reads a `.json` or TOML config and resolves its relative paths.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = Self::parse(&text, json)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        rebase(base, &mut self.hints_dir);
        rebase(base, &mut self.failure_log);
        for p in self.templates_dir.iter_mut().chain(self.ui_dir.iter_mut()) {
            rebase(base, p);
        }
        for db in &mut self.databases {
            rebase(base, &mut db.file_path);
            if let Some(h) = &mut db.hints_path {
                rebase(base, h);
            }
        }
        rebase_provider(base, &mut self.provider);
    }

    /// Unique ids, existing database files and a sane pipeline config.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.pipeline.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for db in &self.databases {
            if !seen.insert(db.db_id.as_str()) {
                bail!("database id {} is registered twice", db.db_id);
            }
            if !db.file_path.is_file() {
                bail!("database file {} for {} does not exist", db.file_path.display(), db.db_id);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RegisteredDb {
    pub profile: DatabaseProfile,
    pub hints_path: PathBuf,
}

impl RegisteredDb {
    /// The stored hint set, if a hint file exists.
    pub fn load_hints(&self) -> anyhow::Result<Option<HintSet>> {
        if !self.hints_path.is_file() {
            return Ok(None);
        }
        let set = load_hint_set(&self.hints_path)
            .with_context(|| format!("cannot load hints for {}", self.profile.db_id))?;
        Ok(Some(set))
    }
}

/// Shared runtime state.
pub struct App {
    pub config: AppConfig,
    pub llm: LlmClient,
    pub databases: BTreeMap<String, RegisteredDb>,
    pub failure_log: Arc<FailureLog>,
    pub locks: CurationLocks,
}

impl App {
    pub fn new(config: AppConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let mut llm = LlmClient::from_binding(&config.provider).context("cannot set up the LLM provider")?;
        if let Some(dir) = &config.templates_dir {
            llm = llm.with_prompts(PromptSet::load_dir(dir)?);
        }
        let databases = config
            .databases
            .iter()
            .map(|e| {
                let hints_path = e
                    .hints_path
                    .clone()
                    .unwrap_or_else(|| hint_file_path(&config.hints_dir, &e.db_id));
                let db = RegisteredDb {
                    profile: DatabaseProfile::new(e.db_id.clone(), e.file_path.clone()),
                    hints_path,
                };
                (e.db_id.clone(), db)
            })
            .collect();
        let failure_log = Arc::new(FailureLog::to_file(config.failure_log.clone()));
        Ok(Self {
            config,
            llm,
            databases,
            failure_log,
            locks: CurationLocks::new(),
        })
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        Self::new(AppConfig::load(path)?)
    }

    pub fn database(&self, db_id: &str) -> Option<&RegisteredDb> {
        self.databases.get(db_id)
    }
}

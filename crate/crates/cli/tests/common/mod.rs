#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

pub fn fixture_transcript() -> Vec<Value> {
    let text = std::fs::read_to_string(fixtures().join("bench/transcript.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn step(purpose: &str, response: &str) -> Value {
    json!({ "purpose": purpose, "response": response })
}

pub fn failing_step(purpose: &str, message: &str) -> Value {
    json!({ "purpose": purpose, "fail": message })
}

/// A scratch directory holding a config, a transcript and the outputs of
/// whatever runs against them.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    /// Scripted provider over `steps`, both fixture databases registered.
    pub fn scripted(steps: &[Value]) -> Self {
        Self::with_provider(steps, "[provider]\nkind = \"scripted\"\ntranscript_file = \"transcript.json\"\n")
    }

    /// Scripted run whose exchanges are recorded to `session.json`.
    pub fn recording(steps: &[Value]) -> Self {
        Self::with_provider(
            steps,
            "[provider]\nkind = \"record\"\nsession_file = \"session.json\"\n\
             [provider.inner]\nkind = \"scripted\"\ntranscript_file = \"transcript.json\"\n",
        )
    }

    fn with_provider(steps: &[Value], provider: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("transcript.json"), serde_json::to_string_pretty(steps).unwrap()).unwrap();
        let ws = Self { dir };
        ws.write_config(provider);
        ws
    }

    /// Replays `session.json` from `other`.
    pub fn replaying(session: &Path) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::copy(session, dir.path().join("session.json")).unwrap();
        let ws = Self { dir };
        ws.write_config("[provider]\nkind = \"replay\"\nsession_file = \"session.json\"\n");
        ws
    }

    fn write_config(&self, provider: &str) {
        let db = fixtures().join("db");
        let text = format!(
            "hints_dir = \"hints\"\nfailure_log = \"failures.jsonl\"\n\n\
             [pipeline]\nmax_repairs_c = 3\nseed = 42\n\n{provider}\n\
             [[databases]]\ndb_id = \"financial\"\nfile_path = {:?}\n\n\
             [[databases]]\ndb_id = \"school\"\nfile_path = {:?}\n",
            db.join("financial.sqlite"),
            db.join("school.sqlite"),
        );
        std::fs::write(self.config(), text).unwrap();
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("hisql.toml")
    }

    pub fn write(&self, rel: &str, text: &str) -> PathBuf {
        let p = self.path(rel);
        std::fs::write(&p, text).unwrap();
        p
    }

    pub fn hisql(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_hisql"))
            .arg("--config")
            .arg(self.config())
            .args(args)
            .env_remove("HISQL_CONFIG")
            .output()
            .unwrap()
    }

    pub fn failure_lines(&self) -> usize {
        std::fs::read_to_string(self.path("failures.jsonl"))
            .map(|t| t.lines().count())
            .unwrap_or(0)
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// report.json with the timestamp removed.
pub fn report_without_timestamp(path: &Path) -> String {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("created_at");
    serde_json::to_string_pretty(&v).unwrap()
}

pub const HISTORY: &str = r#"[
  {"id": "h1", "question": "When was the account opened?", "sql": "SELECT T1.date FROM account AS T1 INNER JOIN trans AS T2 ON T1.account_id = T2.account_id WHERE T2.amount = 840"},
  {"id": "h2", "sql": "SELECT loan_id FROM loan WHERE status = 'A'"}
]"#;

pub const TWO_HINTS: &str = r#"[{"description": "Loans by status.", "sql_query": "SELECT loan_id FROM loan WHERE status = 'A'"},
{"description": "Accounts per region.", "sql_query": "SELECT T2.A3, COUNT(*) FROM account AS T1 JOIN district AS T2 ON T1.district_id = T2.district_id GROUP BY T2.A3"}]"#;

//! Deterministic providers for offline runs: scripted transcripts, replay
//! of recorded sessions, and a recorder that produces those sessions.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmError, LlmProvider};
use crate::ledger::Purpose;

/// One canned answer, optionally guarded by a matcher on the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Required request purpose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    /// Substring the request's user text must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default)]
    pub response: String,
    /// Simulates a transport failure with this message instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

impl ScriptStep {
    pub fn respond(response: impl Into<String>) -> Self {
        Self {
            purpose: None,
            contains: None,
            response: response.into(),
            fail: None,
        }
    }

    pub fn fail(message: impl Into<String>) -> Self {
        Self {
            fail: Some(message.into()),
            ..Self::respond("")
        }
    }

    pub fn for_purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = Some(purpose);
        self
    }

    pub fn when_contains(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    fn check(&self, index: usize, req: &ChatRequest) -> Result<(), LlmError> {
        if let Some(p) = self.purpose {
            if p != req.purpose {
                return Err(LlmError::ScriptMismatch {
                    index,
                    expected: format!("purpose {p}, got {}", req.purpose),
                });
            }
        }
        if let Some(needle) = &self.contains {
            if !req.user_text().contains(needle.as_str()) {
                return Err(LlmError::ScriptMismatch {
                    index,
                    expected: format!("prompt containing {needle:?}"),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn load_steps(path: &Path) -> Result<Vec<ScriptStep>, LlmError> {
    let text = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| LlmError::Config(format!("transcript {}: {e}", path.display())))
}

/// Returns canned responses strictly in transcript order.
#[derive(Debug)]
pub struct ScriptedProvider {
    steps: Vec<ScriptStep>,
    cursor: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            cursor: Mutex::new(0),
        }
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("script cursor poisoned")
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.consumed()
    }
}

impl LlmProvider for ScriptedProvider {
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let mut cursor = self.cursor.lock().expect("script cursor poisoned");
        let index = *cursor;
        let step = self
            .steps
            .get(index)
            .ok_or(LlmError::ScriptExhausted { consumed: index })?;
        step.check(index, req)?;
        *cursor += 1;
        match &step.fail {
            Some(message) => Err(LlmError::Transport {
                attempts: 1,
                message: message.clone(),
            }),
            None => Ok(step.response.clone()),
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// One recorded exchange in a replay session file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub request_digest: String,
    pub response_text: String,
}

struct ReplayState {
    entries: Vec<ReplayEntry>,
    used: Vec<bool>,
}

/// Serves responses from a recorded session.
///
/// Each request is answered by the first unused recording with the same
/// digest, so sessions recorded sequentially replay under concurrent
/// workers too. A request with no unused match is a divergence.
pub struct ReplayProvider {
    state: Mutex<ReplayState>,
}

impl ReplayProvider {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        let used = vec![false; entries.len()];
        Self {
            state: Mutex::new(ReplayState { entries, used }),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let entries: Vec<ReplayEntry> = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("replay session {}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    pub fn unused(&self) -> usize {
        let state = self.state.lock().expect("replay state poisoned");
        state.used.iter().filter(|u| !**u).count()
    }
}

impl LlmProvider for ReplayProvider {
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let digest = req.digest();
        let mut state = self.state.lock().expect("replay state poisoned");
        let ReplayState { entries, used } = &mut *state;
        let found = entries
            .iter()
            .zip(used.iter())
            .position(|(e, u)| !*u && e.request_digest == digest);
        match found {
            Some(i) => {
                used[i] = true;
                Ok(entries[i].response_text.clone())
            }
            None => Err(LlmError::ReplayDivergence {
                digest,
                remaining: used.iter().filter(|u| !**u).count(),
            }),
        }
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// Passes requests through to `inner` and keeps every successful exchange.
/// With a session path, the file is rewritten after each answered call.
pub struct RecordingProvider {
    inner: Arc<dyn LlmProvider>,
    path: Option<PathBuf>,
    entries: Mutex<Vec<ReplayEntry>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn LlmProvider>) -> Self {
        Self {
            inner,
            path: None,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn to_file(inner: Arc<dyn LlmProvider>, path: PathBuf) -> Self {
        Self {
            path: Some(path),
            ..Self::new(inner)
        }
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        self.entries.lock().expect("recording poisoned").clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        write_session(path, &self.entries())
    }
}

fn write_session(path: &Path, entries: &[ReplayEntry]) -> Result<(), LlmError> {
    let mut text = serde_json::to_string_pretty(entries).expect("replay entries serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| LlmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl LlmProvider for RecordingProvider {
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let text = self.inner.send(req)?;
        let mut entries = self.entries.lock().expect("recording poisoned");
        entries.push(ReplayEntry {
            request_digest: req.digest(),
            response_text: text.clone(),
        });
        if let Some(path) = &self.path {
            write_session(path, &entries)?;
        }
        Ok(text)
    }

    fn name(&self) -> &str {
        "record"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn req(purpose: Purpose, text: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.3,
            model: "m".into(),
            purpose,
        }
    }

    #[test]
    fn scripted_consumes_in_order_then_exhausts() {
        let p = ScriptedProvider::new(vec![ScriptStep::respond("a"), ScriptStep::respond("b")]);
        assert_eq!(p.send(&req(Purpose::Generation, "q")).unwrap(), "a");
        assert_eq!(p.send(&req(Purpose::Generation, "q")).unwrap(), "b");
        assert!(matches!(
            p.send(&req(Purpose::Generation, "q")),
            Err(LlmError::ScriptExhausted { consumed: 2 })
        ));
    }

    #[test]
    fn scripted_matchers_guard_steps() {
        let p = ScriptedProvider::new(vec![ScriptStep::respond("a")
            .for_purpose(Purpose::Repair)
            .when_contains("needle")]);
        assert!(matches!(
            p.send(&req(Purpose::Generation, "needle")),
            Err(LlmError::ScriptMismatch { index: 0, .. })
        ));
        assert!(matches!(
            p.send(&req(Purpose::Repair, "hay")),
            Err(LlmError::ScriptMismatch { index: 0, .. })
        ));
        // A mismatch does not consume the step.
        assert_eq!(p.send(&req(Purpose::Repair, "a needle here")).unwrap(), "a");
        assert_eq!(p.remaining(), 0);
    }

    #[test]
    fn scripted_failure_step() {
        let p = ScriptedProvider::new(vec![ScriptStep::fail("connection reset")]);
        assert!(matches!(
            p.send(&req(Purpose::Generation, "q")),
            Err(LlmError::Transport { .. })
        ));
    }

    #[test]
    fn record_then_replay() {
        let inner = Arc::new(ScriptedProvider::new(vec![
            ScriptStep::respond("one"),
            ScriptStep::respond("two"),
        ]));
        let rec = RecordingProvider::new(inner);
        rec.send(&req(Purpose::Generation, "first")).unwrap();
        rec.send(&req(Purpose::Repair, "second")).unwrap();

        let replay = ReplayProvider::new(rec.entries());
        // Out-of-order requests still resolve by digest.
        assert_eq!(replay.send(&req(Purpose::Repair, "second")).unwrap(), "two");
        assert_eq!(replay.send(&req(Purpose::Generation, "first")).unwrap(), "one");
        assert_eq!(replay.unused(), 0);
    }

    #[test]
    fn replay_divergence_is_loud() {
        let inner = Arc::new(ScriptedProvider::new(vec![ScriptStep::respond("one")]));
        let rec = RecordingProvider::new(inner);
        rec.send(&req(Purpose::Generation, "recorded")).unwrap();
        let replay = ReplayProvider::new(rec.entries());
        let err = replay.send(&req(Purpose::Generation, "different")).unwrap_err();
        assert!(matches!(err, LlmError::ReplayDivergence { remaining: 1, .. }));
        // Each recording answers once.
        replay.send(&req(Purpose::Generation, "recorded")).unwrap();
        assert!(replay.send(&req(Purpose::Generation, "recorded")).is_err());
    }

    #[test]
    fn session_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.json");
        let inner = Arc::new(ScriptedProvider::new(vec![ScriptStep::respond("SELECT 1")]));
        let rec = RecordingProvider::to_file(inner, path.clone());
        rec.send(&req(Purpose::Generation, "q")).unwrap();
        let raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(raw[0]["response_text"], "SELECT 1");
        assert!(raw[0]["request_digest"].as_str().unwrap().len() == 64);
        let replay = ReplayProvider::from_file(&path).unwrap();
        assert_eq!(replay.send(&req(Purpose::Generation, "q")).unwrap(), "SELECT 1");
    }
}

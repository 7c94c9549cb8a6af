use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionProvider, CompletionRequest, GatewayError};

/// Hex SHA-256 of `system_prompt + "\0" + user_prompt`.
pub fn prompt_digest(system_prompt: &str, user_prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(system_prompt.as_bytes());
    h.update([0u8]);
    h.update(user_prompt.as_bytes());
    hex::encode(h.finalize())
}

/// One fixture line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub digest: String,
    pub response: String,
}

/// Replays recorded completions keyed by prompt digest. Never touches the network.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    responses: BTreeMap<String, String>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Fixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_jsonl(&text).map_err(|message| GatewayError::Fixture {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut provider = ScriptedProvider::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
            match provider.responses.get(&entry.digest) {
                Some(existing) if *existing != entry.response => {
                    return Err(format!("line {}: conflicting entry for digest {}", n + 1, entry.digest));
                }
                _ => {
                    provider.responses.insert(entry.digest, entry.response);
                }
            }
        }
        Ok(provider)
    }

    pub fn insert(&mut self, system_prompt: &str, user_prompt: &str, response: impl Into<String>) {
        self.responses
            .insert(prompt_digest(system_prompt, user_prompt), response.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(digest.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Fixture text, one entry per line, sorted by digest.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (digest, response) in &self.responses {
            let entry = FixtureEntry {
                digest: digest.clone(),
                response: response.clone(),
            };
            out.push_str(&serde_json::to_string(&entry).expect("plain strings serialize"));
            out.push('\n');
        }
        out
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let digest = prompt_digest(&request.system_prompt, &request.user_prompt);
        self.responses
            .get(&digest)
            .cloned()
            .ok_or(GatewayError::MissingFixture { digest })
    }
}

/// Pass-through provider that records every successful exchange, so a live
/// run can be captured once and replayed with [`ScriptedProvider`].
pub struct Recorder<P> {
    inner: P,
    log: Mutex<Vec<(CompletionRequest, String)>>,
}

impl<P: CompletionProvider> Recorder<P> {
    pub fn new(inner: P) -> Self {
        Recorder {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<(CompletionRequest, String)> {
        self.log.lock().expect("recorder lock").clone()
    }

    pub fn to_scripted(&self) -> ScriptedProvider {
        let mut p = ScriptedProvider::new();
        for (req, resp) in self.exchanges() {
            p.insert(&req.system_prompt, &req.user_prompt, resp);
        }
        p
    }
}

impl<P: CompletionProvider> CompletionProvider for Recorder<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let resp = self.inner.complete(request)?;
        self.log
            .lock()
            .expect("recorder lock")
            .push((request.clone(), resp.clone()));
        Ok(resp)
    }
}

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

/// One line of a transcript fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFixture {
    pub prompt_sha256: String,
    pub reply: String,
}

/// Replays recorded replies keyed by prompt hash; unknown prompts are an error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(fixtures: impl IntoIterator<Item = TranscriptFixture>) -> Self {
        ScriptedBackend {
            replies: fixtures.into_iter().map(|f| (f.prompt_sha256, f.reply)).collect(),
        }
    }

    /// Reads JSON-lines of `{prompt_sha256, reply}`; blank lines are skipped.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, BackendError> {
        let mut fixtures = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: TranscriptFixture = serde_json::from_str(&line)
                .map_err(|e| BackendError::Config(format!("fixture line {}: {e}", i + 1)))?;
            fixtures.push(f);
        }
        Ok(ScriptedBackend::new(fixtures))
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let f = std::fs::File::open(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(std::io::BufReader::new(f))
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let hash = request.prompt_sha256();
        self.replies.get(&hash).cloned().ok_or(BackendError::UnknownPrompt(hash))
    }
}

/// Backend driven by a closure; used for tests and in-process stand-ins.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError>,
{
    pub fn new(f: F) -> Self {
        FnBackend { f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError>,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.f)(request)
    }
}

/// Wraps a backend and keeps every successful exchange as a replayable fixture.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: RefCell<Vec<TranscriptFixture>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, recorded: RefCell::new(Vec::new()) }
    }

    pub fn fixtures(&self) -> Vec<TranscriptFixture> {
        self.recorded.borrow().clone()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for f in self.recorded.borrow().iter() {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let reply = self.inner.complete(request)?;
        self.recorded.borrow_mut().push(TranscriptFixture {
            prompt_sha256: request.prompt_sha256(),
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpConfig};

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};
    use serde_json::json;

    use super::super::{BackendError, ChatBackend, ChatRequest};

    /// OpenAI-style chat-completions endpoint.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct HttpConfig {
        pub base_url: String,
        pub model: String,
        #[serde(default = "default_key_env")]
        pub api_key_env: String,
        #[serde(default = "default_timeout")]
        pub timeout_secs: u64,
    }

    fn default_key_env() -> String {
        "OMS_API_KEY".into()
    }

    fn default_timeout() -> u64 {
        120
    }

    pub struct HttpBackend {
        agent: ureq::Agent,
        url: String,
        model: String,
        api_key: String,
    }

    impl HttpBackend {
        /// Reads the API key from the configured environment variable.
        pub fn from_env(cfg: &HttpConfig) -> Result<Self, BackendError> {
            let api_key = std::env::var(&cfg.api_key_env)
                .map_err(|_| BackendError::Config(format!("environment variable {} is not set", cfg.api_key_env)))?;
            Ok(Self::new(cfg, api_key))
        }

        pub fn new(cfg: &HttpConfig, api_key: String) -> Self {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
                .build()
                .into();
            HttpBackend {
                agent,
                url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
                model: cfg.model.clone(),
                api_key,
            }
        }
    }

    impl ChatBackend for HttpBackend {
        fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
            let mut messages = Vec::new();
            if !request.system.is_empty() {
                messages.push(json!({"role": "system", "content": request.system}));
            }
            messages.push(json!({"role": "user", "content": request.user}));
            let model = if request.params.model_tag.is_empty() || request.params.model_tag == "default" {
                self.model.clone()
            } else {
                request.params.model_tag.clone()
            };
            let body = json!({
                "model": model,
                "temperature": request.params.temperature,
                "messages": messages,
            });
            let mut resp = self
                .agent
                .post(&self.url)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(&body)
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            let v: serde_json::Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            v["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| BackendError::Transport(format!("unexpected response shape: {v}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{prompt_sha256, ChatParams};

    fn req(user: &str) -> ChatRequest {
        ChatRequest { system: "sys".into(), user: user.into(), params: ChatParams::default() }
    }

    #[test]
    fn scripted_replays_and_refuses_unknown() {
        let jsonl = format!(
            "{}\n\n",
            serde_json::to_string(&TranscriptFixture { prompt_sha256: prompt_sha256("sys", "hello"), reply: "hi".into() })
                .unwrap()
        );
        let b = ScriptedBackend::from_jsonl(jsonl.as_bytes()).unwrap();
        assert_eq!(b.complete(&req("hello")).unwrap(), "hi");
        assert!(matches!(b.complete(&req("other")), Err(BackendError::UnknownPrompt(_))));
    }

    #[test]
    fn recording_produces_replayable_fixtures() {
        let rec = RecordingBackend::new(FnBackend::new(|r: &ChatRequest| Ok(r.user.to_uppercase())));
        rec.complete(&req("abc")).unwrap();
        let mut buf = Vec::new();
        rec.write_jsonl(&mut buf).unwrap();
        let replay = ScriptedBackend::from_jsonl(buf.as_slice()).unwrap();
        assert_eq!(replay.complete(&req("abc")).unwrap(), "ABC");
    }
}

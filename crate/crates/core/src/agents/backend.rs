//! Chat backends: the scripted mock, transcript replay, and an HTTP client.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{AgentError, AgentRequest, AgentRole, Capabilities, Exchange};
use crate::mmdit::Matrix;
use crate::schedule::{MotionSchedule, ANALYSIS_FIELDS, SCHEMA_VERSION};
use crate::toyworld::text::label_for_action;

/// A multimodal chat model behind one request/response call.
pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &AgentRequest) -> Result<String, AgentError>;

    fn capabilities(&self) -> Capabilities;

    /// Per-frame intermediate features for an audio clip, `frames × dim`.
    fn reasoning_latents(&self, _audio_ref: &str, _context: &str, _frames: usize, _dim: usize) -> Result<Matrix, AgentError> {
        Err(AgentError::UnsupportedCapability("reasoning latents"))
    }
}

/// One scripted reply of the mock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    /// Return this text verbatim.
    Text(String),
    /// Fail the call as a transport error with this message.
    Error(String),
    /// Answer like the unscripted mock would.
    Auto,
}

/// Cue file contents: replies by request ordinal (0-based, counted over the
/// backend's lifetime); requests past the end of the list get automatic
/// replies.
///
/// ```json
/// {"replies": [{"text": "not json"}, "auto", {"error": "timeout"}]}
/// ```
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub replies: Vec<MockReply>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let s = std::fs::read_to_string(path).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&s).map_err(|e| AgentError::Io(format!("cue file {}: {e}", path.display())))
    }
}

/// Deterministic stand-in for the MLLMs. Unscripted requests get schema-valid
/// answers derived from the request context: the Analyzer echoes the caption,
/// the Planner repeats the caption's action for every shot, and the Reflector
/// returns the plan unchanged.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: MockScript,
    ordinal: Mutex<usize>,
    capabilities: Capabilities,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::scripted(MockScript::default())
    }

    pub fn scripted(script: MockScript) -> Self {
        Self { script, ordinal: Mutex::new(0), capabilities: Capabilities { accepts_audio: true, accepts_image: true, exposes_latents: true } }
    }

    pub fn with_capabilities(mut self, c: Capabilities) -> Self {
        self.capabilities = c;
        self
    }

    /// Requests answered so far.
    pub fn calls(&self) -> usize {
        *self.ordinal.lock().unwrap()
    }

    fn auto(req: &AgentRequest) -> String {
        let ctx = &req.context;
        let s = |k: &str| ctx.get(k).and_then(Value::as_str).unwrap_or("").to_string();
        match req.role {
            AgentRole::Analyzer => {
                let caption = s("caption");
                let mut doc = serde_json::Map::new();
                doc.insert("schema_version".into(), json!(SCHEMA_VERSION));
                let values = [
                    format!("the character in: {caption}"),
                    "plain and conversational".to_string(),
                    if s("speech").is_empty() { "unknown speech".to_string() } else { s("speech") },
                    "neutral".to_string(),
                    if s("user_prompt").is_empty() { "talk to the viewer".to_string() } else { s("user_prompt") },
                    "plain studio background".to_string(),
                ];
                for (k, v) in ANALYSIS_FIELDS.iter().zip(values) {
                    doc.insert((*k).into(), json!(v));
                }
                Value::Object(doc).to_string()
            }
            AgentRole::Planner => {
                let n = ctx.get("n_shots").and_then(Value::as_u64).unwrap_or(1);
                let frames = ctx.get("pass_frames").and_then(Value::as_u64).unwrap_or(1);
                let hint = ctx.pointer("/analysis/persona").and_then(Value::as_str).unwrap_or("");
                let action = label_for_action(hint).as_str();
                let emotion = ctx.pointer("/analysis/emotion").and_then(Value::as_str).unwrap_or("neutral");
                let shots: Vec<Value> = (0..n)
                    .map(|i| json!({"index": i, "expression": emotion, "action": action, "duration_frames": frames}))
                    .collect();
                json!({"schema_version": SCHEMA_VERSION, "shots": shots}).to_string()
            }
            AgentRole::Reflector => ctx.get("schedule").cloned().unwrap_or(Value::Null).to_string(),
        }
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, req: &AgentRequest) -> Result<String, AgentError> {
        let ordinal = {
            let mut o = self.ordinal.lock().unwrap();
            *o += 1;
            *o - 1
        };
        match self.script.replies.get(ordinal).unwrap_or(&MockReply::Auto) {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Error(e) => Err(AgentError::Transport(e.clone())),
            MockReply::Auto => Ok(Self::auto(req)),
        }
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    /// SHA-256 of (audio ref, context, frame, column) mapped into `[-1, 1)`.
    fn reasoning_latents(&self, audio_ref: &str, context: &str, frames: usize, dim: usize) -> Result<Matrix, AgentError> {
        if !self.capabilities.exposes_latents {
            return Err(AgentError::UnsupportedCapability("reasoning latents"));
        }
        let mut data = Vec::with_capacity(frames * dim);
        for f in 0..frames {
            for j in 0..dim {
                let mut h = Sha256::new();
                h.update(audio_ref.as_bytes());
                h.update([0u8]);
                h.update(context.as_bytes());
                h.update((f as u64).to_le_bytes());
                h.update((j as u64).to_le_bytes());
                let d = h.finalize();
                let x = u64::from_le_bytes(d[..8].try_into().unwrap());
                data.push((x >> 11) as f64 / (1u64 << 52) as f64 - 1.0);
            }
        }
        Ok(Matrix { rows: frames, cols: dim, data })
    }
}

/// Answers from a recorded transcript, in order. Each request's prompt must
/// match the recorded one.
#[derive(Debug)]
pub struct ReplayBackend {
    exchanges: Vec<Exchange>,
    next: Mutex<usize>,
    capabilities: Capabilities,
}

impl ReplayBackend {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        Self { exchanges, next: Mutex::new(0), capabilities: Capabilities { accepts_audio: true, accepts_image: true, exposes_latents: false } }
    }

    pub fn from_file(path: &Path) -> Result<Self, AgentError> {
        Ok(Self::new(super::read_transcript(path)?))
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, req: &AgentRequest) -> Result<String, AgentError> {
        let i = {
            let mut n = self.next.lock().unwrap();
            *n += 1;
            *n - 1
        };
        let ex = self.exchanges.get(i).ok_or_else(|| AgentError::Transport(format!("transcript has no exchange {i}")))?;
        if ex.prompt != req.prompt_text {
            return Err(AgentError::Transport(format!("request {i} differs from the recorded prompt")));
        }
        match (&ex.response, &ex.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(AgentError::Transport(e.clone())),
            (None, None) => Err(AgentError::Transport(format!("exchange {i} has no outcome"))),
        }
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }
}

/// Environment variable holding the bearer token of [`HttpBackend`].
pub const TOKEN_ENV: &str = "AGENT_BACKEND_TOKEN";

/// OpenAI-style chat-completions client: `POST {base_url}/chat/completions`
/// with `{"model", "messages": [{"role": "user", "content"}], "temperature"}`;
/// the reply text is `choices[0].message.content`. Attachments are passed as
/// text references appended to the prompt.
#[cfg(feature = "http")]
#[derive(Clone, Debug)]
pub struct HttpBackend {
    pub base_url: String,
    pub model: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpBackend {
    /// Reads the token from `AGENT_BACKEND_TOKEN` if set.
    pub fn new(base_url: &str, model: &str) -> Self {
        Self::with_token(base_url, model, std::env::var(TOKEN_ENV).ok())
    }

    pub fn with_token(base_url: &str, model: &str, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { base_url: base_url.trim_end_matches('/').to_string(), model: model.to_string(), token, agent }
    }
}

#[cfg(feature = "http")]
impl ChatBackend for HttpBackend {
    fn send(&self, req: &AgentRequest) -> Result<String, AgentError> {
        let mut content = req.prompt_text.clone();
        for a in &req.attachments {
            content.push_str(&format!("\n[{}: {}]", a.kind.as_str(), a.reference));
        }
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": if req.deterministic { 0.0 } else { 0.7 },
        });
        let mut r = self.agent.post(format!("{}/chat/completions", self.base_url)).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            r = r.header("Authorization", format!("Bearer {t}"));
        }
        let t = |e: ureq::Error| AgentError::Transport(e.to_string());
        let mut resp = r.send(body.to_string()).map_err(t)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(t)?;
        if !(200..300).contains(&status) {
            return Err(AgentError::Transport(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| AgentError::Transport(format!("bad response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| AgentError::Transport("response lacks choices[0].message.content".into()))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { accepts_audio: false, accepts_image: false, exposes_latents: false }
    }
}

/// Serializes a schedule the way the Reflector context carries it.
pub(crate) fn schedule_context(s: &MotionSchedule) -> Value {
    let mut v = s.to_document();
    if let Some(o) = v.as_object_mut() {
        o.remove("total_frames");
    }
    v
}

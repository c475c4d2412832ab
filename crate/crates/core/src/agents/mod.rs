//! The Analyzer, Planner and Reflector agents over a pluggable chat backend.
//!
//! A [`Session`] issues its backend calls one after another and records every
//! exchange in a [`Transcript`] (optionally appended to a JSONL file as it
//! happens). Structured replies go through [`parse_structured_with_retry`]:
//! a reply that fails validation is answered with the original prompt plus
//! the violation list, up to `max_retries` more times.
//!
//! Prompt templates live in `prompts/*.txt` and may be overridden from a
//! directory. Placeholders:
//!
//! | template | placeholders |
//! |---|---|
//! | `analyzer.txt` | `{{caption}}`, `{{user_prompt}}` |
//! | `planner.txt` | `{{analysis_json}}`, `{{n_shots}}`, `{{pass_frames}}` |
//! | `reflector.txt` | `{{schedule_json}}`, `{{completed_upto}}`, `{{n_shots}}`, `{{pass_frames}}`, `{{active_speaker}}` |

mod backend;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[cfg(feature = "http")]
pub use backend::HttpBackend;
pub use backend::{ChatBackend, MockBackend, MockReply, MockScript, ReplayBackend, TOKEN_ENV};

use crate::mmdit::{LatentClip, Matrix};
use crate::pipeline::Reflector;
use crate::schedule::{
    extract_json, format_violations, validate_analysis, validate_schedule, AnalysisRecord, MotionSchedule, ScheduleSpec,
    Violation, ViolationCode,
};

pub const DEFAULT_MAX_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("backend transport: {0}")]
    Transport(String),
    #[error("{what} failed after {attempts} attempts; last violations:\n{last}")]
    StructuredParse { what: &'static str, attempts: usize, last: String, transcript: Vec<Exchange> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backend lacks the {0} capability")]
    UnsupportedCapability(&'static str),
    #[error("shape: {0}")]
    Shape(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub accepts_audio: bool,
    pub accepts_image: bool,
    pub exposes_latents: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Analyzer,
    Planner,
    Reflector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    Image,
    Audio,
    Frames,
}

impl AttachmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttachmentKind::Image => "image",
            AttachmentKind::Audio => "audio",
            AttachmentKind::Frames => "frames",
        }
    }
}

/// A reference to media the backend should look at: a file path, or an
/// opaque id prefixed with `mem:` for in-memory artifacts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub kind: AttachmentKind,
    pub reference: String,
}

impl Attachment {
    pub fn new(kind: AttachmentKind, reference: impl Into<String>) -> Self {
        Self { kind, reference: reference.into() }
    }

    fn resolve(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(AgentError::InvalidArgument(format!("empty {} reference", self.kind.as_str())));
        }
        if !self.reference.starts_with("mem:") && !Path::new(&self.reference).exists() {
            return Err(AgentError::InvalidArgument(format!("{} {} does not exist", self.kind.as_str(), self.reference)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub prompt_text: String,
    pub attachments: Vec<Attachment>,
    /// Ask for reproducible output (temperature 0 on real backends).
    pub deterministic: bool,
    /// Structured inputs behind the prompt, for backends that can use them
    /// (the mock answers from these).
    pub context: Value,
}

impl AgentRequest {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_text.trim().is_empty() {
            return Err(AgentError::InvalidArgument("empty prompt".into()));
        }
        self.attachments.iter().try_for_each(Attachment::resolve)
    }
}

/// One backend call as recorded in the transcript log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub ordinal: usize,
    pub role: AgentRole,
    pub attempt: usize,
    pub prompt: String,
    pub attachments: Vec<Attachment>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub violations: Vec<Violation>,
}

/// Every exchange of a session, in order.
#[derive(Debug, Default)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
    log: Option<PathBuf>,
}

impl Transcript {
    /// Also append each exchange to `path` as one JSON line.
    pub fn logging_to(path: &Path) -> Self {
        Self { exchanges: Vec::new(), log: Some(path.to_path_buf()) }
    }

    fn push(&mut self, ex: Exchange) -> Result<()> {
        if let Some(p) = &self.log {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| AgentError::Io(format!("{}: {e}", p.display())))?;
            let line = serde_json::to_string(&ex).expect("exchanges serialize");
            writeln!(f, "{line}").map_err(|e| AgentError::Io(e.to_string()))?;
        }
        self.exchanges.push(ex);
        Ok(())
    }

    fn last_mut(&mut self) -> Option<&mut Exchange> {
        self.exchanges.last_mut()
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<Exchange>> {
    let s = std::fs::read_to_string(path).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| AgentError::Io(format!("transcript line: {e}"))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Templates {
    pub analyzer: String,
    pub planner: String,
    pub reflector: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            analyzer: include_str!("../../prompts/analyzer.txt").to_string(),
            planner: include_str!("../../prompts/planner.txt").to_string(),
            reflector: include_str!("../../prompts/reflector.txt").to_string(),
        }
    }
}

impl Templates {
    /// Loads `analyzer.txt`, `planner.txt` and `reflector.txt` from `dir`,
    /// keeping the bundled text for any that are missing.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [("analyzer.txt", &mut t.analyzer), ("planner.txt", &mut t.planner), ("reflector.txt", &mut t.reflector)] {
            let p = dir.join(name);
            if p.exists() {
                *slot = std::fs::read_to_string(&p).map_err(|e| AgentError::Io(format!("{}: {e}", p.display())))?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{{key}}` placeholders; any placeholder left over is an error.
pub fn render_template(template: &str, vars: &[(&str, String)]) -> Result<String> {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    if let Some(i) = out.find("{{") {
        let end = out[i..].find("}}").map(|j| i + j + 2).unwrap_or(out.len());
        return Err(AgentError::Template(format!("unfilled placeholder {}", &out[i..end])));
    }
    Ok(out)
}

/// A validated document and how many retries it took.
#[derive(Clone, Debug, PartialEq)]
pub struct Structured<T> {
    pub value: T,
    pub retries: usize,
}

/// The retry prompt: the original prompt followed by the violations verbatim.
pub fn retry_prompt(original: &str, violations: &[Violation]) -> String {
    format!(
        "{original}\n\nYour previous reply was rejected for these reasons:\n{}\nReply again with a corrected JSON object.",
        format_violations(violations)
    )
}

/// One agent conversation: sequential calls and their transcript.
pub struct Session<'b> {
    backend: &'b dyn ChatBackend,
    pub transcript: Transcript,
    pub templates: Templates,
    pub max_retries: usize,
    ordinal: usize,
}

impl<'b> Session<'b> {
    pub fn new(backend: &'b dyn ChatBackend) -> Self {
        Self { backend, transcript: Transcript::default(), templates: Templates::default(), max_retries: DEFAULT_MAX_RETRIES, ordinal: 0 }
    }

    pub fn with_transcript(mut self, t: Transcript) -> Self {
        self.transcript = t;
        self
    }

    pub fn with_templates(mut self, t: Templates) -> Self {
        self.templates = t;
        self
    }

    pub fn backend(&self) -> &dyn ChatBackend {
        self.backend
    }

    fn call(&mut self, req: &AgentRequest, attempt: usize) -> Result<String> {
        req.validate()?;
        let res = self.backend.send(req);
        let ex = Exchange {
            ordinal: self.ordinal,
            role: req.role,
            attempt,
            prompt: req.prompt_text.clone(),
            attachments: req.attachments.clone(),
            response: res.as_ref().ok().cloned(),
            error: res.as_ref().err().map(|e| e.to_string()),
            violations: Vec::new(),
        };
        self.ordinal += 1;
        self.transcript.push(ex)?;
        res
    }

    fn note_violations(&mut self, v: &[Violation]) {
        if let Some(ex) = self.transcript.last_mut() {
            ex.violations = v.to_vec();
        }
    }
}

/// Sends `req` and validates the reply; on violations re-sends with the
/// violation list appended, for at most `1 + max_retries` attempts in all.
/// Transport errors are not retried.
pub fn parse_structured_with_retry<T>(
    session: &mut Session<'_>,
    what: &'static str,
    req: &AgentRequest,
    validator: impl Fn(&Value) -> std::result::Result<T, Vec<Violation>>,
    max_retries: usize,
) -> Result<Structured<T>> {
    let mut current = req.clone();
    let mut last = Vec::new();
    let start = session.transcript.exchanges.len();
    for attempt in 0..=max_retries {
        let text = session.call(&current, attempt)?;
        let outcome = extract_json(&text).map_err(|v| vec![v]).and_then(|doc| validator(&doc));
        match outcome {
            Ok(value) => return Ok(Structured { value, retries: attempt }),
            Err(v) => {
                session.note_violations(&v);
                current.prompt_text = retry_prompt(&req.prompt_text, &v);
                last = v;
            }
        }
    }
    Err(AgentError::StructuredParse {
        what,
        attempts: max_retries + 1,
        last: format_violations(&last),
        transcript: session.transcript.exchanges[start..].to_vec(),
    })
}

/// Infers persona, speaking style, speech content, emotion, intent and
/// environment from the reference image, its caption and the audio.
pub fn analyze(
    session: &mut Session<'_>,
    image_ref: &str,
    caption: &str,
    audio_ref: &str,
    user_prompt: Option<&str>,
) -> Result<Structured<AnalysisRecord>> {
    if caption.trim().is_empty() {
        return Err(AgentError::InvalidArgument("caption must not be empty".into()));
    }
    let prompt = render_template(
        &session.templates.analyzer,
        &[("caption", caption.to_string()), ("user_prompt", user_prompt.unwrap_or("none").to_string())],
    )?;
    let req = AgentRequest {
        role: AgentRole::Analyzer,
        prompt_text: prompt,
        attachments: vec![Attachment::new(AttachmentKind::Image, image_ref), Attachment::new(AttachmentKind::Audio, audio_ref)],
        deterministic: true,
        context: json!({"caption": caption, "user_prompt": user_prompt.unwrap_or("")}),
    };
    let n = session.max_retries;
    parse_structured_with_retry(session, "analysis", &req, validate_analysis, n)
}

/// A schedule of exactly `n_shots` shots of `pass_frames` frames each.
pub fn plan(
    session: &mut Session<'_>,
    analysis: &AnalysisRecord,
    image_ref: &str,
    n_shots: usize,
    pass_frames: usize,
) -> Result<Structured<MotionSchedule>> {
    if n_shots == 0 || pass_frames == 0 {
        return Err(AgentError::InvalidArgument("n_shots and pass_frames must be at least 1".into()));
    }
    let adoc = analysis.to_document();
    let prompt = render_template(
        &session.templates.planner,
        &[
            ("analysis_json", serde_json::to_string_pretty(&adoc).expect("documents serialize")),
            ("n_shots", n_shots.to_string()),
            ("pass_frames", pass_frames.to_string()),
        ],
    )?;
    let req = AgentRequest {
        role: AgentRole::Planner,
        prompt_text: prompt,
        attachments: vec![Attachment::new(AttachmentKind::Image, image_ref)],
        deterministic: true,
        context: json!({"analysis": adoc, "n_shots": n_shots, "pass_frames": pass_frames}),
    };
    let spec = ScheduleSpec { pass_frames, expected_shots: n_shots, audio_frames: None };
    let n = session.max_retries;
    parse_structured_with_retry(
        session,
        "plan",
        &req,
        |doc| {
            validate_schedule(doc, &spec).map(|mut s| {
                s.source_analysis = analysis.clone();
                s
            })
        },
        n,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reflection {
    pub schedule: MotionSchedule,
    /// Set when reflection gave up and the input schedule was returned.
    pub warning: Option<String>,
    pub retries: usize,
}

/// Re-plans the shots after `completed_upto`. Shots `0..=completed_upto` of
/// the result are byte-identical to the input; a reply touching them is a
/// `PAST_SHOT_MUTATION` violation and is retried. If retries run out the
/// input schedule comes back with a warning. Transport errors propagate.
pub fn reflect(
    session: &mut Session<'_>,
    schedule: &MotionSchedule,
    completed_upto: usize,
    last_frames_ref: &str,
    image_ref: &str,
    active_speaker: Option<u32>,
) -> Result<Reflection> {
    let n = schedule.shots.len();
    if completed_upto >= n {
        return Err(AgentError::InvalidArgument(format!("completed_upto {completed_upto} but the schedule has {n} shots")));
    }
    let pass_frames = schedule.shots[0].duration_frames;
    let sdoc = backend::schedule_context(schedule);
    let prompt = render_template(
        &session.templates.reflector,
        &[
            ("schedule_json", serde_json::to_string_pretty(&sdoc).expect("documents serialize")),
            ("completed_upto", completed_upto.to_string()),
            ("n_shots", n.to_string()),
            ("pass_frames", pass_frames.to_string()),
            ("active_speaker", active_speaker.map(|s| s.to_string()).unwrap_or_else(|| "the only speaker".into())),
        ],
    )?;
    let req = AgentRequest {
        role: AgentRole::Reflector,
        prompt_text: prompt,
        attachments: vec![
            Attachment::new(AttachmentKind::Frames, last_frames_ref),
            Attachment::new(AttachmentKind::Image, image_ref),
        ],
        deterministic: true,
        context: json!({"schedule": sdoc, "completed_upto": completed_upto}),
    };
    let spec = ScheduleSpec { pass_frames, expected_shots: n, audio_frames: None };
    let past: Vec<String> = schedule.shots[..=completed_upto].iter().map(|s| s.to_document().to_string()).collect();
    let validator = |doc: &Value| {
        let mut s = validate_schedule(doc, &spec)?;
        let changed: Vec<Violation> = s
            .shots
            .iter()
            .zip(&past)
            .filter(|(shot, old)| shot.to_document().to_string() != **old)
            .map(|(shot, _)| {
                Violation::new(
                    ViolationCode::PastShotMutation,
                    format!("shots[{}]", shot.index),
                    format!("shot {} is already rendered and must not change", shot.index),
                )
            })
            .collect();
        if !changed.is_empty() {
            return Err(changed);
        }
        s.source_analysis = schedule.source_analysis.clone();
        Ok(s)
    };
    let max = session.max_retries;
    match parse_structured_with_retry(session, "reflection", &req, validator, max) {
        Ok(r) => Ok(Reflection { schedule: r.value, warning: None, retries: r.retries }),
        Err(AgentError::StructuredParse { attempts, last, .. }) => Ok(Reflection {
            schedule: schedule.clone(),
            warning: Some(format!("reflection gave up after {attempts} attempts; keeping the current plan ({last})")),
            retries: max,
        }),
        Err(e) => Err(e),
    }
}

/// Per-frame backend features to concatenate with the audio features.
pub fn extract_reasoning_latents(
    session: &Session<'_>,
    audio_ref: &str,
    analysis_transcript: &str,
    frames: usize,
    dim: usize,
) -> Result<Matrix> {
    if !session.backend.capabilities().exposes_latents {
        return Err(AgentError::UnsupportedCapability("reasoning latents"));
    }
    let m = session.backend.reasoning_latents(audio_ref, analysis_transcript, frames, dim)?;
    if m.rows != frames || m.cols != dim || m.data.len() != frames * dim {
        return Err(AgentError::Shape(format!("backend returned {}x{} latents, expected {frames}x{dim}", m.rows, m.cols)));
    }
    Ok(m)
}

/// [`Reflector`] over an agent session, for long-form generation.
pub struct ReflectHook<'s, 'b> {
    pub session: &'s mut Session<'b>,
    pub image_ref: String,
    pub active_speaker: Option<u32>,
}

impl Reflector for ReflectHook<'_, '_> {
    fn reflect(
        &mut self,
        schedule: &MotionSchedule,
        completed_upto: usize,
        last_frames: &LatentClip,
    ) -> std::result::Result<(MotionSchedule, Option<String>), String> {
        let frames_ref = format!("mem:segment-{completed_upto}-tail-{}", crate::seed::digest_f64(&last_frames.values));
        reflect(self.session, schedule, completed_upto, &frames_ref, &self.image_ref, self.active_speaker)
            .map(|r| (r.schedule, r.warning))
            .map_err(|e| e.to_string())
    }
}

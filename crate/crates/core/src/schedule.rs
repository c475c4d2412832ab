//! Structured outputs of the planning agents and their validation.
//!
//! Documents are JSON with a required `"schema_version": 1`. A schedule:
//!
//! ```json
//! {"schema_version": 1,
//!  "shots": [{"index": 0, "expression": "calm", "action": "walk left", "duration_frames": 24}],
//!  "source_analysis": {...}}
//! ```
//!
//! `source_analysis` is optional on input (the planner overwrites it). An
//! analysis carries six non-empty strings: `persona`, `language_style`,
//! `speech_content`, `emotion`, `intent`, `environment`. Unknown extra keys
//! are ignored.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub persona: String,
    pub language_style: String,
    pub speech_content: String,
    pub emotion: String,
    pub intent: String,
    pub environment: String,
}

pub const ANALYSIS_FIELDS: [&str; 6] = ["persona", "language_style", "speech_content", "emotion", "intent", "environment"];

impl AnalysisRecord {
    fn fields(&self) -> [&String; 6] {
        [&self.persona, &self.language_style, &self.speech_content, &self.emotion, &self.intent, &self.environment]
    }

    pub fn to_document(&self) -> Value {
        let mut m = Map::new();
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
        for (k, v) in ANALYSIS_FIELDS.iter().zip(self.fields()) {
            m.insert((*k).into(), json!(v));
        }
        Value::Object(m)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub index: usize,
    pub expression: String,
    pub action: String,
    pub duration_frames: usize,
}

impl Shot {
    pub fn to_document(&self) -> Value {
        json!({
            "index": self.index,
            "expression": self.expression,
            "action": self.action,
            "duration_frames": self.duration_frames,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionSchedule {
    pub shots: Vec<Shot>,
    pub source_analysis: AnalysisRecord,
}

impl MotionSchedule {
    pub fn total_frames(&self) -> usize {
        self.shots.iter().map(|s| s.duration_frames).sum()
    }

    /// `source_analysis` is left out when the schedule has none (all fields
    /// empty), matching what the validator accepts.
    pub fn to_document(&self) -> Value {
        let mut v = json!({
            "schema_version": SCHEMA_VERSION,
            "shots": self.shots.iter().map(Shot::to_document).collect::<Vec<_>>(),
            "total_frames": self.total_frames(),
        });
        if self.source_analysis != AnalysisRecord::default() {
            v["source_analysis"] = self.source_analysis.to_document();
        }
        v
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("documents serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    InvalidJson,
    BadSchemaVersion,
    MissingField,
    BadType,
    EmptyField,
    WrongShotCount,
    NonContiguousIndex,
    BadDuration,
    InsufficientCoverage,
    PastShotMutation,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::InvalidJson => "INVALID_JSON",
            ViolationCode::BadSchemaVersion => "BAD_SCHEMA_VERSION",
            ViolationCode::MissingField => "MISSING_FIELD",
            ViolationCode::BadType => "BAD_TYPE",
            ViolationCode::EmptyField => "EMPTY_FIELD",
            ViolationCode::WrongShotCount => "WRONG_SHOT_COUNT",
            ViolationCode::NonContiguousIndex => "NON_CONTIGUOUS_INDEX",
            ViolationCode::BadDuration => "BAD_DURATION",
            ViolationCode::InsufficientCoverage => "INSUFFICIENT_COVERAGE",
            ViolationCode::PastShotMutation => "PAST_SHOT_MUTATION",
        }
    }
}

/// One named problem with a document; `path` is a dotted JSON path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code, path: path.into(), message: message.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at {}: {}", self.code.as_str(), self.path, self.message)
    }
}

/// One violation per line, in the form fed back to the backend on retry.
pub fn format_violations(vs: &[Violation]) -> String {
    vs.iter().map(|v| format!("- {v}")).collect::<Vec<_>>().join("\n")
}

/// `ceil(audio_frames / pass_frames)`.
pub fn shots_for_duration(audio_frames: usize, pass_frames: usize) -> Result<usize, ScheduleError> {
    if audio_frames == 0 || pass_frames == 0 {
        return Err(ScheduleError::InvalidArgument(format!(
            "audio_frames ({audio_frames}) and pass_frames ({pass_frames}) must be positive"
        )));
    }
    Ok(audio_frames.div_ceil(pass_frames))
}

/// Pulls the JSON object out of backend text: the whole text if it parses,
/// otherwise the span from the first `{` to the last `}` (tolerating code
/// fences and surrounding prose).
pub fn extract_json(text: &str) -> Result<Value, Violation> {
    let bad = |m: String| Violation::new(ViolationCode::InvalidJson, "$", m);
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        return if v.is_object() { Ok(v) } else { Err(bad("top level is not an object".into())) };
    }
    match (text.find('{'), text.rfind('}')) {
        (Some(a), Some(b)) if a < b => serde_json::from_str::<Value>(&text[a..=b]).map_err(|e| bad(e.to_string())),
        _ => Err(bad("no JSON object found".into())),
    }
}

fn check_version(doc: &Map<String, Value>, out: &mut Vec<Violation>) {
    match doc.get("schema_version") {
        None => out.push(Violation::new(ViolationCode::MissingField, "schema_version", "required")),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => out.push(Violation::new(
            ViolationCode::BadSchemaVersion,
            "schema_version",
            format!("expected {SCHEMA_VERSION}, got {v}"),
        )),
    }
}

fn text_field(obj: &Map<String, Value>, key: &str, path: &str, out: &mut Vec<Violation>) -> Option<String> {
    let p = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
    match obj.get(key) {
        None => {
            out.push(Violation::new(ViolationCode::MissingField, p, "required"));
            None
        }
        Some(Value::String(s)) if s.trim().is_empty() => {
            out.push(Violation::new(ViolationCode::EmptyField, p, "must not be empty"));
            None
        }
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            out.push(Violation::new(ViolationCode::BadType, p, format!("expected a string, got {other}")));
            None
        }
    }
}

fn count_field(obj: &Map<String, Value>, key: &str, path: &str, out: &mut Vec<Violation>) -> Option<usize> {
    let p = format!("{path}.{key}");
    match obj.get(key) {
        None => {
            out.push(Violation::new(ViolationCode::MissingField, p, "required"));
            None
        }
        Some(v) => match v.as_u64() {
            Some(n) => Some(n as usize),
            None => {
                out.push(Violation::new(ViolationCode::BadType, p, format!("expected a non-negative integer, got {v}")));
                None
            }
        },
    }
}

fn analysis_fields(obj: &Map<String, Value>, path: &str, out: &mut Vec<Violation>) -> Option<AnalysisRecord> {
    let f: Vec<Option<String>> = ANALYSIS_FIELDS.iter().map(|k| text_field(obj, k, path, out)).collect();
    if f.iter().any(|x| x.is_none()) {
        return None;
    }
    let mut it = f.into_iter().map(|x| x.unwrap());
    Some(AnalysisRecord {
        persona: it.next()?,
        language_style: it.next()?,
        speech_content: it.next()?,
        emotion: it.next()?,
        intent: it.next()?,
        environment: it.next()?,
    })
}

/// Validates an Analyzer document.
pub fn validate_analysis(doc: &Value) -> Result<AnalysisRecord, Vec<Violation>> {
    let Some(obj) = doc.as_object() else {
        return Err(vec![Violation::new(ViolationCode::BadType, "$", "expected an object")]);
    };
    let mut out = Vec::new();
    check_version(obj, &mut out);
    let rec = analysis_fields(obj, "", &mut out);
    match (rec, out.is_empty()) {
        (Some(r), true) => Ok(r),
        _ => Err(out),
    }
}

/// What a schedule must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleSpec {
    pub pass_frames: usize,
    pub expected_shots: usize,
    /// When set, the schedule must cover this many frames.
    pub audio_frames: Option<usize>,
}

/// Validates a schedule document. Total: every input yields a schedule or a
/// non-empty violation list.
pub fn validate_schedule(doc: &Value, spec: &ScheduleSpec) -> Result<MotionSchedule, Vec<Violation>> {
    let Some(obj) = doc.as_object() else {
        return Err(vec![Violation::new(ViolationCode::BadType, "$", "expected an object")]);
    };
    let mut out = Vec::new();
    check_version(obj, &mut out);
    let analysis = match obj.get("source_analysis") {
        None | Some(Value::Null) => Some(AnalysisRecord::default()),
        Some(Value::Object(a)) => analysis_fields(a, "source_analysis", &mut out),
        Some(other) => {
            out.push(Violation::new(ViolationCode::BadType, "source_analysis", format!("expected an object, got {other}")));
            None
        }
    };
    let mut shots = Vec::new();
    match obj.get("shots") {
        None => out.push(Violation::new(ViolationCode::MissingField, "shots", "required")),
        Some(Value::Array(items)) => {
            if items.len() != spec.expected_shots {
                out.push(Violation::new(
                    ViolationCode::WrongShotCount,
                    "shots",
                    format!("expected {} shots, got {}", spec.expected_shots, items.len()),
                ));
            }
            for (i, item) in items.iter().enumerate() {
                let path = format!("shots[{i}]");
                let Some(s) = item.as_object() else {
                    out.push(Violation::new(ViolationCode::BadType, path, "expected an object"));
                    continue;
                };
                let index = count_field(s, "index", &path, &mut out);
                let expression = text_field(s, "expression", &path, &mut out);
                let action = text_field(s, "action", &path, &mut out);
                let duration = count_field(s, "duration_frames", &path, &mut out);
                if let Some(idx) = index {
                    if idx != i {
                        out.push(Violation::new(
                            ViolationCode::NonContiguousIndex,
                            format!("{path}.index"),
                            format!("expected index {i}, got {idx}"),
                        ));
                    }
                }
                if let Some(d) = duration {
                    if d != spec.pass_frames {
                        out.push(Violation::new(
                            ViolationCode::BadDuration,
                            format!("{path}.duration_frames"),
                            format!("expected {} frames per shot, got {d}", spec.pass_frames),
                        ));
                    }
                }
                if let (Some(index), Some(expression), Some(action), Some(duration_frames)) =
                    (index, expression, action, duration)
                {
                    shots.push(Shot { index, expression, action, duration_frames });
                }
            }
        }
        Some(other) => out.push(Violation::new(ViolationCode::BadType, "shots", format!("expected an array, got {other}"))),
    }
    if let Some(audio) = spec.audio_frames {
        let total: usize = shots.iter().map(|s| s.duration_frames).sum();
        if out.is_empty() && total < audio {
            out.push(Violation::new(
                ViolationCode::InsufficientCoverage,
                "shots",
                format!("shots cover {total} frames, audio has {audio}"),
            ));
        }
    }
    if spec.expected_shots == 0 && out.is_empty() {
        out.push(Violation::new(ViolationCode::WrongShotCount, "shots", "a schedule needs at least one shot"));
    }
    match (analysis, out.is_empty()) {
        (Some(source_analysis), true) => Ok(MotionSchedule { shots, source_analysis }),
        _ => Err(out),
    }
}

//! Toy three-branch multimodal diffusion transformer.
//!
//! Video, text and audio tokens each own a branch of parameters (adaptive
//! modulation, projections, feed-forward) and meet in one shared multi-head
//! self-attention per block. Positions are 3-axis rotary (t, y, x) for video
//! and audio, and a separate 1-D stream for text. A clean reference frame can
//! be appended as a *pseudo last frame* whose temporal index sits a fixed gap
//! beyond the generated clip.
//!
//! The network predicts a flow-matching velocity and is differentiated by
//! hand-written backward passes (see [`model::Model::backward`]).

mod block;
pub mod checkpoint;
mod layout;
pub mod mask;
pub mod model;
pub mod params;
pub mod rope;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use layout::{FrameRole, Modality, TokenInfo, TokenLayout, WorkingClip};
pub use mask::{build_attention_mask, AttendMatrix};
pub use model::{timestep_features, BlockTokens, ForwardCache, Model, ModelInput};
pub use params::{Branch, ParamStore};
pub use rope::{rope_positions, RopePos, RopeTable};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid speaker mask: {0}")]
    InvalidMask(String),
    #[error("pseudo flag set but no frame is marked as the pseudo frame")]
    MissingPseudoFrame,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How identity conditioning reaches the renderer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Trained on native first/last frames; the reference is a shifted
    /// pseudo last frame at inference.
    #[default]
    PseudoLastFrame,
    /// Trained with a reference frame sampled from inside the clip.
    RefImage,
    /// Trained like `PseudoLastFrame` but rendered without any reference.
    None,
}

/// How audio enters the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioInjection {
    /// Dedicated audio branch inside the shared attention.
    #[default]
    SymmetricBranch,
    /// Per-block cross-attention from video queries to fixed audio tokens.
    CrossAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Generated latent frames per pass (T).
    pub latent_frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Spatial patch size (p).
    pub patch: usize,
    pub hidden: usize,
    pub depth: usize,
    pub heads: usize,
    /// Per-frame audio feature width (A).
    pub audio_dim: usize,
    pub text_vocab: usize,
    pub text_max_len: usize,
    /// Temporal distance Δ (latent frames) between the last generated frame
    /// and the pseudo frame.
    pub pseudo_gap: usize,
    /// Width of reasoning latents concatenated to audio; 0 disables.
    pub reasoning_dim: usize,
    pub ffn_mult: usize,
    pub time_freq_dim: usize,
    pub rope_theta: f64,
    pub conditioning: ConditioningMode,
    pub audio_injection: AudioInjection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_frames: 6,
            height: 16,
            width: 16,
            channels: 4,
            patch: 2,
            hidden: 32,
            depth: 2,
            heads: 4,
            audio_dim: 4,
            text_vocab: 64,
            text_max_len: 8,
            pseudo_gap: 4,
            reasoning_dim: 0,
            ffn_mult: 4,
            time_freq_dim: 32,
            rope_theta: 100.0,
            conditioning: ConditioningMode::PseudoLastFrame,
            audio_injection: AudioInjection::SymmetricBranch,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.latent_frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("latent dimensions must be positive".into());
        }
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return bad(format!("patch {} must divide {}x{}", self.patch, self.height, self.width));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if !self.head_dim().is_multiple_of(2) || self.head_dim() < 4 {
            return bad(format!("head dim {} must be even and at least 4", self.head_dim()));
        }
        if self.pseudo_gap < 1 {
            return bad("pseudo_gap must be >= 1".into());
        }
        if self.depth == 0 || self.ffn_mult == 0 || self.audio_dim == 0 {
            return bad("depth, ffn_mult and audio_dim must be positive".into());
        }
        if self.time_freq_dim < 2 || !self.time_freq_dim.is_multiple_of(2) {
            return bad("time_freq_dim must be even".into());
        }
        if self.text_vocab < 2 || self.text_max_len == 0 {
            return bad("text vocabulary needs at least the null token and one word".into());
        }
        if !(self.rope_theta > 1.0) {
            return bad("rope_theta must exceed 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens_per_frame(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn audio_in_dim(&self) -> usize {
        self.audio_dim + self.reasoning_dim
    }
}

/// Row-major 2-D array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ModelError::Shape(format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A latent video: `frames × height × width × channels`, plus per-frame flags
/// marking clean condition frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub cond_mask: Vec<bool>,
}

impl LatentClip {
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
            values: vec![0.0; frames * height * width * channels],
            cond_mask: vec![false; frames],
        }
    }

    pub fn from_values(frames: usize, height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * height * width * channels {
            return Err(ModelError::Shape(format!(
                "{} values for a {frames}x{height}x{width}x{channels} clip",
                values.len()
            )));
        }
        Ok(Self { frames, height, width, channels, values, cond_mask: vec![false; frames] })
    }

    pub fn for_config(cfg: &ModelConfig) -> Self {
        Self::zeros(cfg.latent_frames, cfg.height, cfg.width, cfg.channels)
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.frame_len();
        &self.values[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.values[f * n..(f + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, cfg: &ModelConfig) -> Result<()> {
        if self.height != cfg.height || self.width != cfg.width || self.channels != cfg.channels {
            return Err(ModelError::Shape(format!(
                "clip {}x{}x{} does not match config {}x{}x{}",
                self.height, self.width, self.channels, cfg.height, cfg.width, cfg.channels
            )));
        }
        if self.cond_mask.len() != self.frames || self.values.len() != self.frames * self.frame_len() {
            return Err(ModelError::Shape("clip buffers inconsistent with its frame count".into()));
        }
        Ok(())
    }

    /// Concatenates clips along time; condition flags are carried over.
    pub fn concat(clips: &[LatentClip]) -> Result<LatentClip> {
        let first = clips.first().ok_or_else(|| ModelError::Shape("nothing to concatenate".into()))?;
        let mut out = LatentClip::zeros(0, first.height, first.width, first.channels);
        for c in clips {
            if (c.height, c.width, c.channels) != (first.height, first.width, first.channels) {
                return Err(ModelError::Shape("clips differ in frame shape".into()));
            }
            out.frames += c.frames;
            out.values.extend_from_slice(&c.values);
            out.cond_mask.extend_from_slice(&c.cond_mask);
        }
        Ok(out)
    }
}

/// Text token ids with their positions on the dedicated text stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TextTokens {
    pub ids: Vec<u32>,
    pub positions: Vec<u32>,
}

impl TextTokens {
    /// Ids at positions `0..n`.
    pub fn sequential(ids: Vec<u32>) -> Self {
        let positions = (0..ids.len() as u32).collect();
        Self { ids, positions }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A per-person region (`T × H × W` booleans at latent resolution) plus the
/// audio features that may only be injected inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerMask {
    pub speaker: u32,
    pub mask: Vec<bool>,
    pub audio_features: Matrix,
}

/// Everything one generation pass is conditioned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub text: TextTokens,
    /// `T × A`; ignored when `speaker_masks` is non-empty.
    pub audio_features: Matrix,
    /// Optional `T × r` latents appended to every audio feature row.
    pub reasoning: Option<Matrix>,
    /// Clean latent frames for slots `0..k`.
    pub first_frames: Vec<Vec<f64>>,
    /// Clean last frame: slot `T-1` when `pseudo_flag` is off, otherwise an
    /// appended pseudo frame at temporal index `(T-1)+Δ`.
    pub last_frame: Option<Vec<f64>>,
    pub pseudo_flag: bool,
    /// Reference frame for the ref-image baseline, appended at temporal index 0.
    pub reference: Option<Vec<f64>>,
    pub speaker_masks: Vec<SpeakerMask>,
    /// Audio dropout: audio tokens are kept but isolated from video and text.
    pub audio_dropped: bool,
}

impl ConditionSet {
    /// Text and audio only, no clean frames.
    pub fn new(text: TextTokens, audio_features: Matrix) -> Self {
        Self {
            text,
            audio_features,
            reasoning: None,
            first_frames: Vec::new(),
            last_frame: None,
            pseudo_flag: false,
            reference: None,
            speaker_masks: Vec::new(),
            audio_dropped: false,
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let t = cfg.latent_frames;
        let fl = cfg.frame_len();
        if self.text.ids.len() != self.text.positions.len() {
            return Err(ModelError::Shape("text ids and positions differ in length".into()));
        }
        if self.text.ids.len() > cfg.text_max_len {
            return Err(ModelError::Shape(format!("{} text tokens exceed max {}", self.text.len(), cfg.text_max_len)));
        }
        if let Some(bad) = self.text.ids.iter().find(|&&i| i as usize >= cfg.text_vocab) {
            return Err(ModelError::Shape(format!("text id {bad} outside vocabulary {}", cfg.text_vocab)));
        }
        let check_audio = |m: &Matrix, what: &str| -> Result<()> {
            if m.rows != t || m.cols != cfg.audio_dim {
                return Err(ModelError::Shape(format!(
                    "{what} is {}x{}, expected {t}x{}",
                    m.rows, m.cols, cfg.audio_dim
                )));
            }
            if !m.is_finite() {
                return Err(ModelError::NonFinite("audio features"));
            }
            Ok(())
        };
        if self.speaker_masks.is_empty() {
            check_audio(&self.audio_features, "audio features")?;
        }
        for s in &self.speaker_masks {
            check_audio(&s.audio_features, "speaker audio features")?;
            if s.mask.len() != t * cfg.height * cfg.width {
                return Err(ModelError::Shape(format!("speaker {} mask has {} cells", s.speaker, s.mask.len())));
            }
        }
        match (&self.reasoning, cfg.reasoning_dim) {
            (None, _) => {}
            (Some(r), rd) => {
                if rd == 0 || r.cols != rd {
                    return Err(ModelError::Shape(format!("reasoning width {} but config expects {rd}", r.cols)));
                }
                if r.rows != t {
                    return Err(ModelError::Shape(format!("reasoning has {} frames, expected {t}", r.rows)));
                }
                if !r.is_finite() {
                    return Err(ModelError::NonFinite("reasoning latents"));
                }
            }
        }
        if self.first_frames.len() > t {
            return Err(ModelError::Shape("more first frames than latent frames".into()));
        }
        let frames = self.first_frames.iter().chain(&self.last_frame).chain(&self.reference);
        for f in frames {
            if f.len() != fl {
                return Err(ModelError::Shape(format!("condition frame has {} values, expected {fl}", f.len())));
            }
            if !f.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite("condition frame"));
            }
        }
        if self.pseudo_flag && self.last_frame.is_none() {
            return Err(ModelError::MissingPseudoFrame);
        }
        mask::check_disjoint(&self.speaker_masks)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_token_ratio_small() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        // one audio token per frame against (H/p)(W/p) video tokens
        let ratio = 1.0 / cfg.tokens_per_frame() as f64;
        assert!(ratio <= 1.0 / 64.0);
        assert_eq!(ratio, (cfg.patch * cfg.patch) as f64 / (cfg.height * cfg.width) as f64);
    }

    #[test]
    fn config_rejects_bad_patch_and_heads() {
        let cfg = ModelConfig { patch: 3, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
        let cfg = ModelConfig { heads: 5, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
        let cfg = ModelConfig { pseudo_gap: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn pseudo_flag_requires_last_frame() {
        let cfg = ModelConfig::default();
        let mut c = ConditionSet::new(TextTokens::sequential(vec![1]), Matrix::zeros(6, 4));
        c.pseudo_flag = true;
        assert_eq!(c.validate(&cfg), Err(ModelError::MissingPseudoFrame));
    }

    #[test]
    fn config_unknown_keys_are_rejected() {
        let err = toml::from_str::<ModelConfig>("hidden = 8\nbogus_key = 1").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
    }
}

use serde::{Deserialize, Serialize};

use super::{ConditionSet, LatentClip, ModelConfig, ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Video,
    Text,
    Audio,
}

/// Role of one frame in the working sequence fed to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRole {
    /// Slot `i` of the generated clip (possibly clamped to a clean condition).
    Generated(usize),
    /// Appended pseudo last frame.
    Pseudo,
    /// Appended reference frame (ref-image baseline).
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenInfo {
    pub modality: Modality,
    /// Working-sequence frame for video tokens, audio frame for audio tokens.
    pub frame: Option<usize>,
    /// Patch row/column for video tokens.
    pub spatial: Option<(usize, usize)>,
    pub speaker: Option<u32>,
    /// Position on the text stream.
    pub text_pos: Option<u32>,
    /// Video token belongs to a clean condition frame.
    pub cond: bool,
}

/// Per-token bookkeeping; order is video, then text, then audio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub tokens: Vec<TokenInfo>,
    pub frame_roles: Vec<FrameRole>,
    pub grid: (usize, usize),
    pub patch: usize,
    pub n_video: usize,
    pub n_text: usize,
    pub n_audio: usize,
}

impl TokenLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn video_range(&self) -> std::ops::Range<usize> {
        0..self.n_video
    }

    pub fn text_range(&self) -> std::ops::Range<usize> {
        self.n_video..self.n_video + self.n_text
    }

    pub fn audio_range(&self) -> std::ops::Range<usize> {
        self.n_video + self.n_text..self.len()
    }

    /// Video-only layout for a clip whose frames are all generated slots.
    pub(crate) fn video_only(cfg: &ModelConfig, roles: Vec<FrameRole>, cond_mask: &[bool]) -> Self {
        let (gh, gw) = cfg.grid();
        let mut tokens = Vec::with_capacity(roles.len() * gh * gw);
        for (f, &c) in cond_mask.iter().enumerate() {
            for y in 0..gh {
                for x in 0..gw {
                    tokens.push(TokenInfo {
                        modality: Modality::Video,
                        frame: Some(f),
                        spatial: Some((y, x)),
                        speaker: None,
                        text_pos: None,
                        cond: c,
                    });
                }
            }
        }
        let n_video = tokens.len();
        Self { tokens, frame_roles: roles, grid: (gh, gw), patch: cfg.patch, n_video, n_text: 0, n_audio: 0 }
    }

    pub(crate) fn push_text(&mut self, positions: &[u32]) {
        assert_eq!(self.n_audio, 0, "text tokens must precede audio tokens");
        for &p in positions {
            self.tokens.push(TokenInfo {
                modality: Modality::Text,
                frame: None,
                spatial: None,
                speaker: None,
                text_pos: Some(p),
                cond: false,
            });
        }
        self.n_text += positions.len();
    }

    pub(crate) fn push_audio(&mut self, frames: usize, speaker: Option<u32>) {
        for t in 0..frames {
            self.tokens.push(TokenInfo {
                modality: Modality::Audio,
                frame: Some(t),
                spatial: None,
                speaker,
                text_pos: None,
                cond: false,
            });
        }
        self.n_audio += frames;
    }
}

/// The frame sequence actually embedded: the generated clip with clean
/// condition frames written into their slots, plus any appended frames.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkingClip {
    pub values: Vec<f64>,
    pub roles: Vec<FrameRole>,
    pub cond_mask: Vec<bool>,
}

impl WorkingClip {
    pub fn frames(&self) -> usize {
        self.roles.len()
    }
}

/// Writes clean condition frames into `latents` and appends the pseudo or
/// reference frame.
pub(crate) fn assemble(latents: &LatentClip, cond: &ConditionSet, cfg: &ModelConfig) -> Result<WorkingClip> {
    latents.check_shape(cfg)?;
    if latents.frames != cfg.latent_frames {
        return Err(ModelError::Shape(format!(
            "clip has {} frames, config expects {}",
            latents.frames, cfg.latent_frames
        )));
    }
    if !latents.is_finite() {
        return Err(ModelError::NonFinite("latents"));
    }
    cond.validate(cfg)?;
    let t = cfg.latent_frames;
    let fl = cfg.frame_len();
    let mut values = latents.values.clone();
    let mut cond_mask = latents.cond_mask.clone();
    let mut roles: Vec<FrameRole> = (0..t).map(FrameRole::Generated).collect();
    for (i, f) in cond.first_frames.iter().enumerate() {
        values[i * fl..(i + 1) * fl].copy_from_slice(f);
        cond_mask[i] = true;
    }
    if let Some(last) = &cond.last_frame {
        if cond.pseudo_flag {
            values.extend_from_slice(last);
            cond_mask.push(true);
            roles.push(FrameRole::Pseudo);
        } else {
            values[(t - 1) * fl..t * fl].copy_from_slice(last);
            cond_mask[t - 1] = true;
        }
    }
    if let Some(r) = &cond.reference {
        values.extend_from_slice(r);
        cond_mask.push(true);
        roles.push(FrameRole::Reference);
    }
    Ok(WorkingClip { values, roles, cond_mask })
}

/// Builds the full token layout for a working clip and condition set.
pub(crate) fn full_layout(cfg: &ModelConfig, work: &WorkingClip, cond: &ConditionSet) -> TokenLayout {
    let mut layout = TokenLayout::video_only(cfg, work.roles.clone(), &work.cond_mask);
    layout.push_text(&cond.text.positions);
    if cond.speaker_masks.is_empty() {
        layout.push_audio(cfg.latent_frames, None);
    } else {
        for s in &cond.speaker_masks {
            layout.push_audio(cfg.latent_frames, Some(s.speaker));
        }
    }
    layout
}

/// Splits a `frames × H × W × C` buffer into `p × p` patches, token order
/// (frame, patch row, patch column), patch vector order (dy, dx, channel).
pub(crate) fn patchify(values: &[f64], frames: usize, cfg: &ModelConfig) -> Vec<f64> {
    let (h, w, c, p) = (cfg.height, cfg.width, cfg.channels, cfg.patch);
    let (gh, gw) = cfg.grid();
    let pd = cfg.patch_dim();
    let mut out = vec![0.0; frames * gh * gw * pd];
    for f in 0..frames {
        for gy in 0..gh {
            for gx in 0..gw {
                let tok = (f * gh + gy) * gw + gx;
                for dy in 0..p {
                    for dx in 0..p {
                        let src = ((f * h + gy * p + dy) * w + gx * p + dx) * c;
                        let dst = tok * pd + (dy * p + dx) * c;
                        out[dst..dst + c].copy_from_slice(&values[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`].
pub(crate) fn unpatchify(tokens: &[f64], frames: usize, cfg: &ModelConfig) -> Vec<f64> {
    let (h, w, c, p) = (cfg.height, cfg.width, cfg.channels, cfg.patch);
    let (gh, gw) = cfg.grid();
    let pd = cfg.patch_dim();
    let mut out = vec![0.0; frames * h * w * c];
    for f in 0..frames {
        for gy in 0..gh {
            for gx in 0..gw {
                let tok = (f * gh + gy) * gw + gx;
                for dy in 0..p {
                    for dx in 0..p {
                        let dst = ((f * h + gy * p + dy) * w + gx * p + dx) * c;
                        let src = tok * pd + (dy * p + dx) * c;
                        out[dst..dst + c].copy_from_slice(&tokens[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

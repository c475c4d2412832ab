//! Attend-permission matrices for the shared attention.
//!
//! With speaker masks, a video token and a speaker's audio token may exchange
//! attention only where the token's patch overlaps that speaker's region at
//! the audio token's frame; different speakers' audio tokens never see each
//! other.

use std::ops::Range;

use super::{Modality, ModelError, Result, SpeakerMask, TokenLayout};

#[derive(Clone, Debug, PartialEq)]
pub struct AttendMatrix {
    n: usize,
    allowed: Vec<bool>,
}

impl AttendMatrix {
    pub fn all(n: usize) -> Self {
        Self { n, allowed: vec![true; n * n] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.n + key]
    }

    pub fn set(&mut self, query: usize, key: usize, v: bool) {
        self.allowed[query * self.n + key] = v;
    }

    pub fn is_all(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    /// Row-major copy of a sub-block, or `None` when it is entirely allowed.
    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> Option<Vec<bool>> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for r in rows {
            out.extend_from_slice(&self.allowed[r * self.n + cols.start..r * self.n + cols.end]);
        }
        if out.iter().all(|&a| a) {
            None
        } else {
            Some(out)
        }
    }

    /// Cuts every audio↔(video|text) link: the audio-dropout path.
    pub fn isolate_audio(&mut self, layout: &TokenLayout) {
        let audio = layout.audio_range();
        for q in 0..self.n {
            for k in 0..self.n {
                if audio.contains(&q) != audio.contains(&k) {
                    self.set(q, k, false);
                }
            }
        }
    }
}

pub(crate) fn check_disjoint(masks: &[SpeakerMask]) -> Result<()> {
    for (i, a) in masks.iter().enumerate() {
        for b in &masks[i + 1..] {
            if a.speaker == b.speaker {
                return Err(ModelError::InvalidMask(format!("speaker {} listed twice", a.speaker)));
            }
            if a.mask.len() != b.mask.len() {
                return Err(ModelError::InvalidMask("masks differ in size".into()));
            }
            if let Some(cell) = a.mask.iter().zip(&b.mask).position(|(x, y)| *x && *y) {
                return Err(ModelError::InvalidMask(format!(
                    "speakers {} and {} overlap at cell {cell}",
                    a.speaker, b.speaker
                )));
            }
        }
    }
    Ok(())
}

/// Whether patch `(gy, gx)` touches any masked cell of frame `t`.
fn patch_overlaps(mask: &[bool], layout: &TokenLayout, t: usize, gy: usize, gx: usize) -> bool {
    let p = layout.patch;
    let (gh, gw) = layout.grid;
    let (h, w) = (gh * p, gw * p);
    (0..p).any(|dy| (0..p).any(|dx| mask[(t * h + gy * p + dy) * w + gx * p + dx]))
}

/// Builds the permission matrix for `layout`. No masks means every pair may
/// attend.
pub fn build_attention_mask(layout: &TokenLayout, speaker_masks: &[SpeakerMask]) -> Result<AttendMatrix> {
    check_disjoint(speaker_masks)?;
    let n = layout.len();
    let mut m = AttendMatrix::all(n);
    if speaker_masks.is_empty() {
        return Ok(m);
    }
    let (gh, gw) = layout.grid;
    let cells_per_frame = gh * gw * layout.patch * layout.patch;
    let mask_of = |speaker: Option<u32>| -> Result<&SpeakerMask> {
        let id = speaker.ok_or_else(|| ModelError::InvalidMask("audio token without speaker".into()))?;
        speaker_masks
            .iter()
            .find(|s| s.speaker == id)
            .ok_or_else(|| ModelError::InvalidMask(format!("no mask for speaker {id}")))
    };
    for a in layout.audio_range() {
        let at = &layout.tokens[a];
        let sm = mask_of(at.speaker)?;
        let t = at.frame.unwrap_or(0);
        if (t + 1) * cells_per_frame > sm.mask.len() {
            return Err(ModelError::InvalidMask(format!("speaker {} mask too short for frame {t}", sm.speaker)));
        }
        for v in layout.video_range() {
            let (gy, gx) = layout.tokens[v].spatial.unwrap_or((0, 0));
            let ok = patch_overlaps(&sm.mask, layout, t, gy, gx);
            m.set(v, a, ok);
            m.set(a, v, ok);
        }
        for b in layout.audio_range() {
            let same = layout.tokens[b].speaker == at.speaker;
            m.set(a, b, same);
        }
    }
    debug_assert!(layout.tokens[layout.audio_range()].iter().all(|t| t.modality == Modality::Audio));
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdit::{FrameRole, Matrix, ModelConfig};

    fn layout_with_speakers(cfg: &ModelConfig, speakers: &[u32]) -> TokenLayout {
        let t = cfg.latent_frames;
        let mut l = TokenLayout::video_only(cfg, (0..t).map(FrameRole::Generated).collect(), &vec![false; t]);
        l.push_text(&[0, 1]);
        for &s in speakers {
            l.push_audio(t, Some(s));
        }
        l
    }

    fn mask_from(cfg: &ModelConfig, f: impl Fn(usize, usize, usize) -> bool) -> Vec<bool> {
        let mut m = Vec::new();
        for t in 0..cfg.latent_frames {
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    m.push(f(t, y, x));
                }
            }
        }
        m
    }

    #[test]
    fn no_speakers_allows_everything() {
        let cfg = ModelConfig::default();
        let l = layout_with_speakers(&cfg, &[]);
        assert!(build_attention_mask(&l, &[]).unwrap().is_all());
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let cfg = ModelConfig::default();
        let full = mask_from(&cfg, |_, _, _| true);
        let s = |id| SpeakerMask { speaker: id, mask: full.clone(), audio_features: Matrix::zeros(6, 4) };
        let l = layout_with_speakers(&cfg, &[1, 2]);
        assert!(matches!(build_attention_mask(&l, &[s(1), s(2)]), Err(ModelError::InvalidMask(_))));
    }

    #[test]
    fn empty_mask_blocks_all_video_links() {
        let cfg = ModelConfig::default();
        let none = mask_from(&cfg, |_, _, _| false);
        let s = SpeakerMask { speaker: 3, mask: none, audio_features: Matrix::zeros(6, 4) };
        let l = layout_with_speakers(&cfg, &[3]);
        let m = build_attention_mask(&l, &[s]).unwrap();
        for v in l.video_range() {
            for a in l.audio_range() {
                assert!(!m.allowed(v, a) && !m.allowed(a, v));
            }
        }
    }

    #[test]
    fn isolate_audio_cuts_cross_modal_links_only() {
        let cfg = ModelConfig::default();
        let mut l = layout_with_speakers(&cfg, &[]);
        l.push_audio(cfg.latent_frames, None);
        let mut m = AttendMatrix::all(l.len());
        m.isolate_audio(&l);
        let a = l.audio_range().start;
        assert!(!m.allowed(0, a) && !m.allowed(a, 0));
        assert!(m.allowed(a, a + 1) && m.allowed(0, l.text_range().start));
    }
}

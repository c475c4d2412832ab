//! Rotary positions.
//!
//! Each head's `dh/2` rotation pairs are split into three groups driven by
//! the temporal, row and column index of a token. Text tokens use every pair
//! with their own 1-D position instead. Audio tokens carry only a temporal
//! index, shared with the video frame they accompany.

use serde::{Deserialize, Serialize};

use super::{FrameRole, Modality, ModelConfig, ModelError, Result, TokenLayout};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RopePos {
    /// (temporal, row, column)
    Axes { t: f64, y: f64, x: f64 },
    /// Text stream position.
    Stream(f64),
}

/// Per-token rotary inputs for a layout.
///
/// Generated frames sit at temporal indices `0..T`; the pseudo frame at
/// `(T-1)+Δ`; a reference frame (ref-image baseline) at 0.
pub fn rope_positions(cfg: &ModelConfig, layout: &TokenLayout, pseudo_flag: bool) -> Result<Vec<RopePos>> {
    let has_pseudo = layout.frame_roles.iter().filter(|r| **r == FrameRole::Pseudo).count();
    if pseudo_flag && has_pseudo != 1 {
        return Err(ModelError::MissingPseudoFrame);
    }
    let t_last = cfg.latent_frames as f64 - 1.0;
    let temporal = |frame: usize| -> f64 {
        match layout.frame_roles[frame] {
            FrameRole::Generated(i) => i as f64,
            FrameRole::Pseudo => t_last + cfg.pseudo_gap as f64,
            FrameRole::Reference => 0.0,
        }
    };
    layout
        .tokens
        .iter()
        .map(|tok| {
            Ok(match tok.modality {
                Modality::Video => {
                    let f = tok.frame.ok_or_else(|| ModelError::Shape("video token without frame".into()))?;
                    let (y, x) = tok.spatial.unwrap_or((0, 0));
                    RopePos::Axes { t: temporal(f), y: y as f64, x: x as f64 }
                }
                Modality::Audio => {
                    let f = tok.frame.ok_or_else(|| ModelError::Shape("audio token without frame".into()))?;
                    RopePos::Axes { t: f as f64, y: 0.0, x: 0.0 }
                }
                Modality::Text => RopePos::Stream(tok.text_pos.unwrap_or(0) as f64),
            })
        })
        .collect()
}

/// Pair counts per axis for a head dimension: (t, y, x).
pub fn axis_pairs(head_dim: usize) -> (usize, usize, usize) {
    let pairs = head_dim / 2;
    let yx = pairs / 4;
    (pairs - 2 * yx, yx, yx)
}

/// Precomputed cos/sin per (token, pair).
#[derive(Clone, Debug, PartialEq)]
pub struct RopeTable {
    pub pairs: usize,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl RopeTable {
    pub fn build(cfg: &ModelConfig, positions: &[RopePos]) -> Self {
        let dh = cfg.head_dim();
        let pairs = dh / 2;
        let (tp, yp, xp) = axis_pairs(dh);
        let freq = |j: usize, group: usize| -> f64 { cfg.rope_theta.powf(-(j as f64) / group.max(1) as f64) };
        let mut angles = vec![0.0; positions.len() * pairs];
        for (n, pos) in positions.iter().enumerate() {
            let row = &mut angles[n * pairs..(n + 1) * pairs];
            match *pos {
                RopePos::Axes { t, y, x } => {
                    for j in 0..tp {
                        row[j] = t * freq(j, tp);
                    }
                    for j in 0..yp {
                        row[tp + j] = y * freq(j, yp);
                    }
                    for j in 0..xp {
                        row[tp + yp + j] = x * freq(j, xp);
                    }
                }
                RopePos::Stream(s) => {
                    for (j, a) in row.iter_mut().enumerate() {
                        *a = s * freq(j, pairs);
                    }
                }
            }
        }
        Self { pairs, cos: angles.iter().map(|a| a.cos()).collect(), sin: angles.iter().map(|a| a.sin()).collect() }
    }

    /// Subset of rows, e.g. the tokens taking part in one attention call.
    pub fn rows(&self, range: std::ops::Range<usize>) -> RopeTable {
        let p = self.pairs;
        RopeTable {
            pairs: p,
            cos: self.cos[range.start * p..range.end * p].to_vec(),
            sin: self.sin[range.start * p..range.end * p].to_vec(),
        }
    }

    /// Rotates every head of an `n × (heads·dh)` matrix in place.
    pub fn apply(&self, x: &mut [f64], width: usize) {
        self.rotate(x, width, 1.0);
    }

    /// Transposed rotation, the backward of [`RopeTable::apply`].
    pub fn apply_transpose(&self, g: &mut [f64], width: usize) {
        self.rotate(g, width, -1.0);
    }

    fn rotate(&self, x: &mut [f64], width: usize, sign: f64) {
        let p = self.pairs;
        let dh = 2 * p;
        let n = x.len() / width;
        for r in 0..n {
            let cs = &self.cos[r * p..(r + 1) * p];
            let sn = &self.sin[r * p..(r + 1) * p];
            for head in x[r * width..(r + 1) * width].chunks_exact_mut(dh) {
                for j in 0..p {
                    let (a, b) = (head[2 * j], head[2 * j + 1]);
                    let s = sign * sn[j];
                    head[2 * j] = a * cs[j] - b * s;
                    head[2 * j + 1] = a * s + b * cs[j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdit::layout::{FrameRole, TokenLayout};

    fn temporal_of_frame(pos: &[RopePos], layout: &TokenLayout, frame: usize) -> f64 {
        let i = layout.tokens.iter().position(|t| t.frame == Some(frame)).unwrap();
        match pos[i] {
            RopePos::Axes { t, .. } => t,
            _ => unreachable!(),
        }
    }

    #[test]
    fn pseudo_frame_sits_gap_beyond_clip_end() {
        let cfg = ModelConfig::default();
        let mut roles: Vec<FrameRole> = (0..6).map(FrameRole::Generated).collect();
        roles.push(FrameRole::Pseudo);
        let layout = TokenLayout::video_only(&cfg, roles, &[false; 7]);
        let pos = rope_positions(&cfg, &layout, true).unwrap();
        assert_eq!(temporal_of_frame(&pos, &layout, 6), 9.0);
        for f in 0..6 {
            assert_eq!(temporal_of_frame(&pos, &layout, f), f as f64);
        }
    }

    #[test]
    fn pseudo_flag_without_pseudo_frame_is_an_error() {
        let cfg = ModelConfig::default();
        let layout = TokenLayout::video_only(&cfg, (0..6).map(FrameRole::Generated).collect(), &[false; 6]);
        assert_eq!(rope_positions(&cfg, &layout, true), Err(ModelError::MissingPseudoFrame));
        let pos = rope_positions(&cfg, &layout, false).unwrap();
        let ts: Vec<f64> = (0..6).map(|f| temporal_of_frame(&pos, &layout, f)).collect();
        assert_eq!(ts, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let cfg = ModelConfig::default();
        let pos = vec![RopePos::Axes { t: 3.0, y: 1.0, x: 2.0 }, RopePos::Stream(5.0)];
        let table = RopeTable::build(&cfg, &pos);
        let x: Vec<f64> = (0..2 * cfg.hidden).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut y = x.clone();
        table.apply(&mut y, cfg.hidden);
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        assert!((norm(&x) - norm(&y)).abs() < 1e-12);
        table.apply_transpose(&mut y, cfg.hidden);
        assert!(crate::linalg::max_abs_diff(&x, &y) < 1e-12);
    }

    #[test]
    fn axis_split_covers_all_pairs() {
        for dh in [4, 8, 16, 32] {
            let (t, y, x) = axis_pairs(dh);
            assert_eq!(t + y + x, dh / 2);
            assert!(t >= 1);
        }
    }
}

//! Synthetic avatar world.
//!
//! A saturated-colour sprite on a black background. Its hue and shape are the
//! identity; its motion follows a text label; a small "mouth" patch is
//! brightened toward white by an aperture signal that tracks the audio
//! envelope on synced samples. Every property is recoverable from pixels,
//! which is what the measurements in [`measure`] rely on.

pub mod codec;
pub mod corpus;
pub mod measure;
pub mod text;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{toy_decode, toy_encode};
pub use corpus::{CorpusEntry, CorpusManifest, DEFAULT_SYNC_FRACTION};
pub use measure::{classify_motion, identity_error, lip_sync_score, motion_variance};

/// Pixel frames per clip (one generation pass, 1 s at 24 fps).
pub const FRAMES: usize = 24;
/// Square pixel resolution.
pub const SIZE: usize = 32;
pub const CHANNELS: usize = 3;
/// Width of the per-frame audio feature vector given to the model.
pub const AUDIO_DIM: usize = 4;
/// Horizontal walking speed in pixels per frame.
pub const WALK_SPEED: f64 = 0.4;
/// Vertical amplitude and period (frames) of the wave bob.
pub const WAVE_AMPLITUDE: f64 = 2.5;
pub const WAVE_PERIOD: f64 = 12.0;

#[derive(Debug, Error, PartialEq)]
pub enum ToyError {
    #[error("unknown motion label {0:?}")]
    UnknownLabel(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("score undefined: {0}")]
    UndefinedScore(&'static str),
    #[error("no sprite detected in frame {frame}")]
    Detection { frame: usize },
    #[error("corpus file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ToyError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotionLabel {
    #[serde(rename = "idle")]
    Idle,
    #[serde(rename = "walk left")]
    WalkLeft,
    #[serde(rename = "walk right")]
    WalkRight,
    #[serde(rename = "wave")]
    Wave,
}

impl MotionLabel {
    pub const ALL: [MotionLabel; 4] = [MotionLabel::Idle, MotionLabel::WalkLeft, MotionLabel::WalkRight, MotionLabel::Wave];

    pub fn as_str(self) -> &'static str {
        match self {
            MotionLabel::Idle => "idle",
            MotionLabel::WalkLeft => "walk left",
            MotionLabel::WalkRight => "walk right",
            MotionLabel::Wave => "wave",
        }
    }

    /// Labels whose clips contain gross motion.
    pub fn is_dynamic(self) -> bool {
        self != MotionLabel::Idle
    }
}

impl fmt::Display for MotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionLabel {
    type Err = ToyError;
    fn from_str(s: &str) -> Result<Self> {
        MotionLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s.trim())
            .ok_or_else(|| ToyError::UnknownLabel(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Circle,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Diamond];

    /// Whether offset `(dx, dy)` from the sprite centre is inside the shape.
    pub fn contains(self, dx: i64, dy: i64) -> bool {
        match self {
            Shape::Square => dx.abs() <= 4 && dy.abs() <= 4,
            Shape::Circle => dx * dx + dy * dy <= 25,
            Shape::Diamond => dx.abs() + dy.abs() <= 6,
        }
    }
}

/// Mouth patch offsets: three rows below the centre, five columns wide.
/// Inside every shape.
pub fn in_mouth(dx: i64, dy: i64) -> bool {
    (1..=3).contains(&dy) && dx.abs() <= 2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    /// Hue in turns, `[0, 1)`.
    pub hue: f64,
    pub shape: Shape,
}

impl Identity {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self { hue: rng.random::<f64>(), shape: Shape::ALL[rng.random_range(0..3)] }
    }

    /// Fully saturated, full-value RGB of the hue.
    pub fn rgb(&self) -> [f64; 3] {
        hsv_rgb(self.hue)
    }
}

fn hsv_rgb(h: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (q, t) = (1.0 - f, f);
    match sector {
        0 => [1.0, t, 0.0],
        1 => [q, 1.0, 0.0],
        2 => [0.0, 1.0, t],
        3 => [0.0, q, 1.0],
        4 => [t, 0.0, 1.0],
        _ => [1.0, 0.0, q],
    }
}

/// Pixel video `frames × height × width × 3`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Video {
    pub fn blank(frames: usize, height: usize, width: usize) -> Self {
        Self { frames, height, width, pixels: vec![0.0; frames * height * width * CHANNELS] }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.frame_len();
        &self.pixels[f * n..(f + 1) * n]
    }

    pub fn pixel(&self, f: usize, y: usize, x: usize) -> [f64; 3] {
        let i = ((f * self.height + y) * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn check(&self) -> Result<()> {
        if self.pixels.len() != self.frames * self.frame_len() || self.frames == 0 {
            return Err(ToyError::Shape(format!(
                "{} pixel values for {}x{}x{}x3",
                self.pixels.len(),
                self.frames,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Draws one sprite frame. The centre is rounded to the pixel grid.
pub fn draw_sprite(video: &mut Video, f: usize, identity: &Identity, center: (f64, f64), aperture: f64) {
    let (cx, cy) = (center.0.round() as i64, center.1.round() as i64);
    let rgb = identity.rgb();
    let a = aperture.clamp(0.0, 1.0);
    for y in 0..video.height as i64 {
        for x in 0..video.width as i64 {
            let (dx, dy) = (x - cx, y - cy);
            if !identity.shape.contains(dx, dy) {
                continue;
            }
            let i = ((f * video.height + y as usize) * video.width + x as usize) * CHANNELS;
            for c in 0..CHANNELS {
                video.pixels[i + c] = if in_mouth(dx, dy) { rgb[c] + a * (1.0 - rgb[c]) } else { rgb[c] };
            }
        }
    }
}

/// A user "reference photo": one frame, sprite centred, mouth closed.
pub fn render_reference(identity: &Identity) -> Video {
    let mut v = Video::blank(1, SIZE, SIZE);
    draw_sprite(&mut v, 0, identity, (SIZE as f64 / 2.0, SIZE as f64 / 2.0), 0.0);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySample {
    pub seed: u64,
    pub video: Video,
    /// Audio loudness per frame, `[0, 1]`.
    pub envelope: Vec<f64>,
    /// Rendered mouth opening per frame.
    pub aperture: Vec<f64>,
    pub label: MotionLabel,
    pub identity: Identity,
    pub transcript: String,
    pub sync_flag: bool,
    /// Sprite centre per frame before grid rounding.
    pub centers: Vec<(f64, f64)>,
}

/// Smooth loudness curve: random knots every three frames, linearly
/// interpolated.
pub fn random_envelope<R: Rng>(rng: &mut R, frames: usize) -> Vec<f64> {
    let knots: Vec<f64> = (0..frames / 3 + 2).map(|_| rng.random::<f64>()).collect();
    (0..frames)
        .map(|t| {
            let k = t / 3;
            let w = (t % 3) as f64 / 3.0;
            (1.0 - w) * knots[k] + w * knots[k + 1]
        })
        .collect()
}

const SYLLABLES: [&str; 8] = ["ba", "da", "ka", "la", "ma", "na", "pa", "ta"];

fn transcript_from(envelope: &[f64], rng: &mut impl Rng) -> String {
    let n = envelope.windows(2).filter(|w| w[0] < 0.5 && w[1] >= 0.5).count().max(1);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect::<Vec<_>>().join(" ")
}

/// Sprite centre trajectory for a label.
pub fn trajectory<R: Rng>(rng: &mut R, label: MotionLabel, frames: usize) -> Vec<(f64, f64)> {
    let cy0 = rng.random_range(12.0..19.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let cx0 = match label {
        MotionLabel::WalkLeft => rng.random_range(19.0..22.0),
        MotionLabel::WalkRight => rng.random_range(10.0..13.0),
        _ => rng.random_range(12.0..19.0),
    };
    (0..frames)
        .map(|t| {
            let t = t as f64;
            match label {
                MotionLabel::Idle => (cx0, cy0),
                MotionLabel::WalkLeft => (cx0 - WALK_SPEED * t, cy0),
                MotionLabel::WalkRight => (cx0 + WALK_SPEED * t, cy0),
                MotionLabel::Wave => {
                    (cx0, cy0 + WAVE_AMPLITUDE * (std::f64::consts::TAU * t / WAVE_PERIOD + phase).sin())
                }
            }
        })
        .collect()
}

/// Deterministic sample for `seed`. On synced samples the mouth aperture is
/// the envelope itself; otherwise it is an independent curve.
pub fn make_sample(seed: u64, label: &str, identity: Identity, sync_flag: bool) -> Result<ToySample> {
    let label: MotionLabel = label.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let envelope = random_envelope(&mut rng, FRAMES);
    let decoy = random_envelope(&mut rng, FRAMES);
    let aperture = if sync_flag { envelope.clone() } else { decoy };
    let centers = trajectory(&mut rng, label, FRAMES);
    let transcript = transcript_from(&envelope, &mut rng);
    let mut video = Video::blank(FRAMES, SIZE, SIZE);
    for (f, (&c, &a)) in centers.iter().zip(&aperture).enumerate() {
        draw_sprite(&mut video, f, &identity, c, a);
    }
    Ok(ToySample { seed, video, envelope, aperture, label, identity, transcript, sync_flag, centers })
}

/// Per-frame model audio features `[env, Δenv, env(t−1), env(t−2)]`, with
/// indices before the clip clamped to frame 0.
pub fn audio_features(envelope: &[f64]) -> Vec<[f64; AUDIO_DIM]> {
    let at = |t: isize| envelope[t.max(0) as usize];
    (0..envelope.len() as isize).map(|t| [at(t), at(t) - at(t - 1), at(t - 1), at(t - 2)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident() -> Identity {
        Identity { hue: 0.3, shape: Shape::Circle }
    }

    #[test]
    fn labels_parse_and_reject_unknown() {
        for l in MotionLabel::ALL {
            assert_eq!(l.as_str().parse::<MotionLabel>().unwrap(), l);
        }
        assert_eq!(make_sample(1, "dance", ident(), true).unwrap_err(), ToyError::UnknownLabel("dance".into()));
    }

    #[test]
    fn samples_are_deterministic() {
        let a = make_sample(42, "wave", ident(), true).unwrap();
        let b = make_sample(42, "wave", ident(), true).unwrap();
        assert_eq!(a, b);
        let c = make_sample(43, "wave", ident(), true).unwrap();
        assert_ne!(a.video, c.video);
    }

    #[test]
    fn idle_has_no_net_displacement() {
        let s = make_sample(7, "idle", ident(), true).unwrap();
        assert_eq!(s.centers.first(), s.centers.last());
    }

    #[test]
    fn mouth_fits_every_shape() {
        for s in Shape::ALL {
            for dy in -6..=6 {
                for dx in -6..=6 {
                    if in_mouth(dx, dy) {
                        assert!(s.contains(dx, dy), "{s:?} {dx} {dy}");
                    }
                }
            }
        }
    }

    #[test]
    fn hue_wheel_is_saturated() {
        for i in 0..60 {
            let c = hsv_rgb(i as f64 / 60.0);
            let mx = c.iter().cloned().fold(0.0, f64::max);
            let mn = c.iter().cloned().fold(1.0, f64::min);
            assert_eq!((mx, mn), (1.0, 0.0));
        }
    }

    #[test]
    fn features_have_lags() {
        let f = audio_features(&[0.1, 0.5, 0.2]);
        assert_eq!(f[0], [0.1, 0.0, 0.1, 0.1]);
        assert_eq!(f[2], [0.2, 0.2 - 0.5, 0.5, 0.1]);
    }
}

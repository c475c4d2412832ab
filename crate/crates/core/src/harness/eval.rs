//! Toy-world evaluation of a trained model: render held-out prompts and
//! measure the clips in pixel space.

use serde::{Deserialize, Serialize};

use crate::mmdit::{LatentClip, Model, ModelConfig};
use crate::pipeline::{generate_clip, PipelineError, SamplerConfig, SegmentPlan};
use crate::schedule::Shot;
use crate::seed;
use crate::toyworld::{
    classify_motion, identity_error, lip_sync_score, motion_variance, render_reference, toy_decode, toy_encode,
    CorpusEntry, MotionLabel, ToyError, FRAMES,
};

/// The encoded reference image of an identity: one latent frame.
pub fn reference_latent(entry: &CorpusEntry) -> Result<Vec<f64>, ToyError> {
    Ok(toy_encode(&render_reference(&entry.identity))?.frame(0).to_vec())
}

/// The plan that renders `entry`'s prompt and audio from scratch.
pub fn eval_plan(cfg: &ModelConfig, entry: &CorpusEntry) -> Result<SegmentPlan, PipelineError> {
    let sample = entry.sample()?;
    if cfg.latent_frames != FRAMES {
        return Err(PipelineError::Config(format!("toy evaluation needs {FRAMES} latent frames")));
    }
    Ok(SegmentPlan {
        shot: Shot { index: 0, expression: "neutral".into(), action: entry.label.as_str().into(), duration_frames: FRAMES },
        audio: crate::pipeline::audio_matrix(&sample.envelope),
        prev_tail: Vec::new(),
        reference: reference_latent(entry)?,
        reasoning: None,
    })
}

/// Measurements of one generated clip. `None` marks a clip where the sprite
/// could not be found (or the score was undefined).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEval {
    pub seed: u64,
    pub label: MotionLabel,
    pub sync: bool,
    pub predicted: Option<MotionLabel>,
    pub lip_sync: Option<f64>,
    pub motion_variance: Option<f64>,
    pub identity_error: Option<f64>,
}

pub fn measure_clip(entry: &CorpusEntry, clip: &LatentClip) -> Result<ClipEval, ToyError> {
    let video = toy_decode(clip)?;
    let sample = entry.sample()?;
    Ok(ClipEval {
        seed: entry.seed,
        label: entry.label,
        sync: entry.sync,
        predicted: classify_motion(&video).ok(),
        lip_sync: lip_sync_score(&video, &sample.envelope).ok(),
        motion_variance: motion_variance(&video).ok(),
        identity_error: identity_error(&video, &entry.identity).ok(),
    })
}

/// Generates and measures every entry; clip `i` uses sampler seed
/// `derive(sampler.seed, [i])`.
pub fn evaluate(model: &Model, entries: &[CorpusEntry], sampler: &SamplerConfig) -> Result<Vec<ClipEval>, PipelineError> {
    crate::par::try_map_indexed(entries.len(), |i| {
        let plan = eval_plan(&model.cfg, &entries[i])?;
        let s = SamplerConfig { seed: seed::derive(sampler.seed, &[i as u64]), ..*sampler };
        let clip = generate_clip(model, &plan, &s)?;
        Ok(measure_clip(&entries[i], &clip)?)
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub clips: usize,
    /// Mean lip-sync score over synced clips; undetected clips count as 0.
    pub lip_sync: f64,
    pub synced_clips: usize,
    /// Share of clips whose measured motion matches the prompt label.
    pub motion_accuracy: f64,
    /// Means over dynamic-label clips where the sprite was found.
    pub motion_variance: f64,
    pub identity_error: f64,
    pub detection_failures: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { f64::NAN } else { s / n as f64 }
}

pub fn summarize(evals: &[ClipEval]) -> EvalSummary {
    let synced: Vec<&ClipEval> = evals.iter().filter(|e| e.sync).collect();
    let dynamic = || evals.iter().filter(|e| e.label.is_dynamic());
    EvalSummary {
        clips: evals.len(),
        lip_sync: mean(synced.iter().map(|e| e.lip_sync.unwrap_or(0.0))),
        synced_clips: synced.len(),
        motion_accuracy: mean(evals.iter().map(|e| if e.predicted == Some(e.label) { 1.0 } else { 0.0 })),
        motion_variance: mean(dynamic().filter_map(|e| e.motion_variance)),
        identity_error: mean(dynamic().filter_map(|e| e.identity_error)),
        detection_failures: evals.iter().filter(|e| e.motion_variance.is_none()).count(),
    }
}

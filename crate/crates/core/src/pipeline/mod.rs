//! Training stages, branch transplant, and autoregressive synthesis.
//!
//! Stage order for the full model:
//!
//! 1. `pretrain`: text + video only (audio tokens isolated), first-frame
//!    conditioning. Stands in for the pre-trained text-to-video backbone.
//! 2. `warmup`: the whole three-branch model trained jointly.
//! 3. [`assemble_stage2`]: video/text/shared arrays from the pretrained
//!    checkpoint, audio arrays from the warm-up checkpoint.
//! 4. `main` (and optionally `finetune`) from the assembled checkpoint.

mod generate;
mod optim;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    conditions_for, generate_clip, generate_long, multi_person_generate, LongRun, Reflector, SamplerConfig, SegmentPlan,
    SpeakerPlan,
};
pub use optim::{clip_grad_norm, AdamW};
pub use train::{
    assemble_stage2, audio_matrix, batch_gradient, build_example, train_main, train_stage, train_stage1_warmup, write_metrics_csv, Example,
    StepRecord, TrainOutcome, Trainer,
};

use crate::flowmatch::{FlowError, TSampler};
use crate::mmdit::ModelError;
use crate::toyworld::ToyError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("transplant: {0}")]
    Transplant(String),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Text + video backbone training; audio is always dropped and no last
    /// frame is used.
    Pretrain,
    #[default]
    Warmup,
    Main,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Warmup => "warmup",
            Stage::Main => "main",
            Stage::Finetune => "finetune",
        }
    }
}

/// Optimizer and conditioning-dropout settings for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Linear learning-rate ramp from 0 over this many steps.
    pub lr_warmup_steps: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Probability that the first `first_frames` latent frames are clean.
    pub p_first: f64,
    /// Probability that the last latent frame is clean.
    pub p_last: f64,
    /// Audio dropout on synced samples.
    pub p_audio_drop: f64,
    /// Audio dropout on samples whose mouth ignores the audio.
    pub p_audio_drop_unsynced: f64,
    pub p_text_drop: f64,
    /// Distribution of the flow time per training example.
    pub t_sampling: TSampler,
    /// Number of clean first frames when first-frame conditioning fires (k).
    pub first_frames: usize,
    pub stage: Stage,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            lr_warmup_steps: 0,
            batch_size: 8,
            grad_clip: 1.0,
            steps: 100,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            p_first: 0.5,
            p_last: 0.5,
            p_audio_drop: 0.3,
            p_audio_drop_unsynced: 1.0,
            p_text_drop: 0.1,
            t_sampling: TSampler::Uniform,
            first_frames: 1,
            stage: Stage::Warmup,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_first", self.p_first),
            ("p_last", self.p_last),
            ("p_audio_drop", self.p_audio_drop),
            ("p_audio_drop_unsynced", self.p_audio_drop_unsynced),
            ("p_text_drop", self.p_text_drop),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(PipelineError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if let TSampler::LogitNormal { mean, std } = self.t_sampling {
            if !mean.is_finite() || !(std > 0.0) || !std.is_finite() {
                return Err(PipelineError::Config("logit-normal t sampling needs a finite mean and positive std".into()));
            }
        }
        if matches!(self.t_sampling, TSampler::Fixed(_)) {
            return Err(PipelineError::Config("fixed t is for probes, not training".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(PipelineError::Config("grad_clip must be positive".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(PipelineError::Config("lr and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(PipelineError::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at (0-based) `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr_warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.lr_warmup_steps as f64).min(1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_documented_values() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.grad_clip, c.batch_size), (5e-5, 1.0, 8));
        assert_eq!((c.p_first, c.p_last, c.p_audio_drop, c.p_text_drop), (0.5, 0.5, 0.3, 0.1));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let c = TrainConfig { p_last: 1.5, ..Default::default() };
        assert!(matches!(c.validate(), Err(PipelineError::Config(m)) if m.contains("p_last")));
        let c = TrainConfig { grad_clip: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let err = toml::from_str::<TrainConfig>("lr = 1e-3\nlearning_rate = 2").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn lr_ramp() {
        let c = TrainConfig { lr: 1.0, lr_warmup_steps: 4, ..Default::default() };
        assert_eq!(c.lr_at(0), 0.25);
        assert_eq!(c.lr_at(3), 1.0);
        assert_eq!(c.lr_at(100), 1.0);
    }
}

//! Experiment configuration (TOML). Unknown keys are rejected everywhere.
//!
//! ```toml
//! seed = 7
//!
//! [model]            # mmdit::ModelConfig; toy defaults below
//! hidden = 64
//!
//! [train]            # pipeline::TrainConfig shared by every stage
//! lr = 1e-3
//!
//! [stages]
//! pretrain_steps = 1000
//! warmup_steps = 500
//! main_steps = 2000
//!
//! [data]
//! corpus_size = 4000
//!
//! [sampler]
//! steps = 16
//!
//! [agents]
//! backend = "mock"
//! cue_file = "cues.json"
//!
//! [generate]
//! shots = 3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::mmdit::{AudioInjection, ConditioningMode, ModelConfig};
use crate::flowmatch::TSampler;
use crate::pipeline::TrainConfig;
use crate::toyworld::{Identity, Shape, DEFAULT_SYNC_FRACTION, FRAMES};

/// The renderer configuration used for toy-world experiments.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        latent_frames: FRAMES,
        height: 16,
        width: 16,
        channels: 12,
        patch: 4,
        hidden: 64,
        depth: 2,
        heads: 4,
        audio_dim: 4,
        text_vocab: 16,
        text_max_len: 4,
        ..ModelConfig::default()
    }
}

/// Optimizer settings tuned for the toy world; the documented paper-scale
/// defaults live in [`TrainConfig::default`].
pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        lr_warmup_steps: 100,
        t_sampling: TSampler::LogitNormal { mean: 0.0, std: 1.0 },
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagesConfig {
    pub pretrain_steps: usize,
    pub warmup_steps: usize,
    pub main_steps: usize,
    pub finetune_steps: usize,
    /// Off: main training starts from the pretrained model with its untouched
    /// audio branch (no warm-up, no transplant).
    pub use_warmup: bool,
    /// Reuse checkpoints instead of training those stages.
    pub pretrained_checkpoint: Option<PathBuf>,
    pub warmup_checkpoint: Option<PathBuf>,
}

impl Default for StagesConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: 1000,
            warmup_steps: 500,
            main_steps: 2000,
            finetune_steps: 0,
            use_warmup: true,
            pretrained_checkpoint: None,
            warmup_checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub corpus_seed: u64,
    pub corpus_size: usize,
    pub sync_fraction: f64,
    /// Held-out evaluation prompts (disjoint seed stream).
    pub eval_seed: u64,
    pub eval_size: usize,
    pub eval_sync_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus_seed: 1,
            corpus_size: 4000,
            sync_fraction: DEFAULT_SYNC_FRACTION,
            eval_seed: 1_000_001,
            eval_size: 100,
            eval_sync_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub steps: usize,
    pub tail_frames: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { steps: 16, tail_frames: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(HarnessError::Config(format!("unknown backend {other:?} (expected mock or http)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsConfig {
    pub backend: BackendKind,
    /// Mock replies by request ordinal (see `agents::MockScript`).
    pub cue_file: Option<PathBuf>,
    pub base_url: String,
    pub model_name: String,
    pub max_retries: usize,
    /// Directory overriding the bundled prompt templates.
    pub prompts_dir: Option<PathBuf>,
    pub image_ref: String,
    pub audio_ref: String,
    pub caption: String,
    pub user_prompt: Option<String>,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            cue_file: None,
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "default".into(),
            max_retries: crate::agents::DEFAULT_MAX_RETRIES,
            prompts_dir: None,
            image_ref: "mem:reference".into(),
            audio_ref: "mem:audio".into(),
            caption: "a bright square character who likes to walk left".into(),
            user_prompt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// Renderer checkpoint; when absent the main pipeline is trained first.
    pub checkpoint: Option<PathBuf>,
    /// Schedule document; when absent the agents plan one.
    pub schedule: Option<PathBuf>,
    pub shots: usize,
    pub reflect: bool,
    pub identity: Identity,
    /// Seed of the toy audio envelope.
    pub audio_seed: u64,
    /// Reflection target for the `reflect` experiment.
    pub completed_upto: usize,
    pub speakers: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            schedule: None,
            shots: 3,
            reflect: false,
            identity: Identity { hue: 0.0, shape: Shape::Square },
            audio_seed: 11,
            completed_upto: 0,
            speakers: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stages: StagesConfig,
    pub data: DataConfig,
    pub sampler: SamplerSettings,
    pub agents: AgentsConfig,
    pub generate: GenerateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: toy_model_config(),
            train: toy_train_config(),
            stages: StagesConfig::default(),
            data: DataConfig::default(),
            sampler: SamplerSettings::default(),
            agents: AgentsConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.sampler.steps == 0 {
            return Err(HarnessError::Config("sampler.steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Experiments that [`super::run_experiment`] knows.
pub const EXPERIMENTS: [&str; 11] = [
    "warmup",
    "main",
    "ablate-crossattn",
    "ablate-refimage",
    "ablate-nowarmup",
    "ablate-nopseudo",
    "generate",
    "plan",
    "reflect",
    "multiperson",
    "eval",
];

/// The configuration an experiment actually runs with: ablations flip exactly
/// one switch of the base config.
pub fn effective_config(name: &str, base: &ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
    if !EXPERIMENTS.contains(&name) {
        return Err(HarnessError::UnknownExperiment(name.to_string()));
    }
    let mut c = base.clone();
    match name {
        "ablate-crossattn" => c.model.audio_injection = AudioInjection::CrossAttention,
        "ablate-refimage" => c.model.conditioning = ConditioningMode::RefImage,
        "ablate-nopseudo" => c.model.conditioning = ConditioningMode::None,
        "ablate-nowarmup" => c.stages.use_warmup = false,
        _ => {}
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = ExperimentConfig::from_toml("seed = 1\n[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = ExperimentConfig::from_toml("[stages]\nwarmup = 3\n").unwrap_err();
        assert!(e.to_string().contains("warmup"), "{e}");
    }

    #[test]
    fn ablations_flip_one_switch() {
        let base = ExperimentConfig::default();
        let r = effective_config("ablate-refimage", &base).unwrap();
        assert_eq!(ExperimentConfig { model: ModelConfig { conditioning: base.model.conditioning, ..r.model.clone() }, ..r.clone() }, base);
        assert_eq!(r.model.conditioning, ConditioningMode::RefImage);
        assert!(!effective_config("ablate-nowarmup", &base).unwrap().stages.use_warmup);
        assert!(matches!(effective_config("bogus", &base), Err(HarnessError::UnknownExperiment(_))));
    }
}

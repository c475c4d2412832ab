//! Experiment runner, configuration, toy evaluation and GSB arithmetic.

mod config;
mod eval;
mod gsb;
mod run;

use thiserror::Error;

pub use config::{
    effective_config, toy_model_config, toy_train_config, AgentsConfig, BackendKind, DataConfig, ExperimentConfig,
    GenerateConfig, SamplerSettings, StagesConfig, EXPERIMENTS,
};
pub use eval::{eval_plan, evaluate, measure_clip, reference_latent, summarize, ClipEval, EvalSummary};
pub use gsb::{gsb, GsbScore, GsbTally};
pub use run::{
    config_hash, eval_entries, evaluate_config, load_schedule, make_backend, read_latents, rerun_manifest, run_experiment,
    sampler, toy_audio, write_latents, RunManifest, CODE_VERSION,
};

use crate::agents::AgentError;
use crate::mmdit::ModelError;
use crate::pipeline::PipelineError;
use crate::schedule::ScheduleError;
use crate::toyworld::ToyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("config: {0}")]
    Config(String),
    #[error("undefined score: {0}")]
    UndefinedScore(&'static str),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

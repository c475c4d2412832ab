//! Experiment drivers. Each run writes into its own directory:
//!
//! | file | contents |
//! |---|---|
//! | `manifest.json` | experiment, seed, config SHA-256, code version, full config, artifacts |
//! | `config.toml` | the effective config |
//! | `metrics_<stage>.csv` | `step,loss,grad_norm,lr` per optimizer step (`grad_norm` after clipping) |
//! | `<stage>.ckpt` | renderer checkpoints (`pretrain`, `warmup`, `assembled`, `main`, `finetune`) |
//! | `eval.json`, `eval_clips.csv` | toy-world measurements of held-out generations |
//! | `analysis.json`, `schedule.json`, `transcript.jsonl` | agent outputs and every backend exchange |
//! | `clips.bin` | generated latents (see [`write_latents`]) |

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{effective_config, BackendKind, ExperimentConfig};
use super::eval::{evaluate, reference_latent, summarize, ClipEval, EvalSummary};
use super::HarnessError;
use crate::agents::{self, ChatBackend, MockBackend, MockScript, ReflectHook, Session, Templates, Transcript};
use crate::mmdit::{Checkpoint, LatentClip, Model};
use crate::pipeline::{
    assemble_stage2, audio_matrix, generate_long, multi_person_generate, train_stage, write_metrics_csv, SamplerConfig,
    SegmentPlan, SpeakerPlan, Stage, StepRecord, TrainConfig,
};
use crate::schedule::{shots_for_duration, validate_schedule, MotionSchedule, ScheduleSpec, Shot};
use crate::seed::derive;
use crate::toyworld::{random_envelope, CorpusEntry, CorpusManifest};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

const TAG_MODEL: u64 = 1;
const TAG_PRETRAIN: u64 = 2;
const TAG_WARMUP: u64 = 3;
const TAG_MAIN: u64 = 4;
const TAG_FINETUNE: u64 = 5;
const TAG_SAMPLER: u64 = 6;
const TAG_AUDIO: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u64,
    pub config_sha256: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let s = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        serde_json::from_str(&s).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

fn io(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

struct Run {
    out: PathBuf,
    artifacts: Vec<String>,
    warnings: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.out.join(name)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| io(&p, e))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), HarnessError> {
        let s = serde_json::to_string_pretty(v).expect("artifacts serialize");
        self.write(name, s + "\n")
    }
}

/// Runs experiment `name` with `base` (ablations flip their switch first) and
/// returns the output directory.
pub fn run_experiment(name: &str, base: &ExperimentConfig, out: &Path) -> Result<PathBuf, HarnessError> {
    let cfg = effective_config(name, base)?;
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let mut run = Run { out: out.to_path_buf(), artifacts: Vec::new(), warnings: Vec::new() };
    run.write("config.toml", cfg.to_toml())?;
    match name {
        "warmup" => {
            let stages = ExperimentConfig { stages: super::config::StagesConfig { main_steps: 0, finetune_steps: 0, use_warmup: true, ..cfg.stages.clone() }, ..cfg.clone() };
            train_chain(&stages, &mut run, false)?;
        }
        "main" | "ablate-crossattn" | "ablate-refimage" | "ablate-nowarmup" | "ablate-nopseudo" => {
            let model = train_chain(&cfg, &mut run, true)?;
            eval_into(&cfg, &model, &mut run)?;
        }
        "eval" => {
            let model = load_or_train(&cfg, &mut run)?;
            eval_into(&cfg, &model, &mut run)?;
        }
        "plan" => {
            let backend = make_backend(&cfg)?;
            plan_into(&cfg, backend.as_ref(), &mut run)?;
        }
        "reflect" => {
            let backend = make_backend(&cfg)?;
            let sched = match &cfg.generate.schedule {
                Some(p) => load_schedule(p, cfg.model.latent_frames)?,
                None => plan_into(&cfg, backend.as_ref(), &mut run)?,
            };
            let log = run.path("transcript_reflect.jsonl");
            let mut session = session(&cfg, backend.as_ref(), &log)?;
            let r = agents::reflect(&mut session, &sched, cfg.generate.completed_upto, "mem:last-frames", &cfg.agents.image_ref, None)?;
            run.warnings.extend(r.warning.clone());
            run.write("schedule_reflected.json", r.schedule.to_json_pretty() + "\n")?;
        }
        "generate" => generate_into(&cfg, &mut run)?,
        "multiperson" => multiperson_into(&cfg, &mut run)?,
        _ => unreachable!("effective_config checked the name"),
    }
    let manifest = RunManifest {
        experiment: name.to_string(),
        seed: cfg.seed,
        config_sha256: config_hash(&cfg),
        code_version: CODE_VERSION.to_string(),
        config: cfg,
        artifacts: run.artifacts.clone(),
        warnings: run.warnings.clone(),
    };
    run.write_json("manifest.json", &manifest)?;
    Ok(out.to_path_buf())
}

/// Re-runs the experiment a manifest describes into `out`.
pub fn rerun_manifest(manifest: &Path, out: &Path) -> Result<PathBuf, HarnessError> {
    let m = RunManifest::load(manifest)?;
    if config_hash(&m.config) != m.config_sha256 {
        return Err(HarnessError::Config("manifest config does not match its hash".into()));
    }
    // The stored config is already effective; ablation switches are idempotent.
    run_experiment(&m.experiment, &m.config, out)
}

fn stage_cfg(cfg: &ExperimentConfig, stage: Stage, steps: usize, tag: u64) -> TrainConfig {
    TrainConfig { stage, steps, seed: derive(cfg.seed, &[tag]), ..cfg.train.clone() }
}

fn corpus(cfg: &ExperimentConfig) -> CorpusManifest {
    CorpusManifest::generate(cfg.data.corpus_seed, cfg.data.corpus_size, cfg.data.sync_fraction)
}

/// Held-out prompts: a separate manifest seed, so no training sample repeats.
pub fn eval_entries(cfg: &ExperimentConfig) -> Vec<CorpusEntry> {
    CorpusManifest::generate(cfg.data.eval_seed, cfg.data.eval_size, cfg.data.eval_sync_fraction).entries
}

fn run_stage(
    model: &mut Model,
    data: &CorpusManifest,
    tc: &TrainConfig,
    run: &mut Run,
) -> Result<Vec<StepRecord>, HarnessError> {
    let name = tc.stage.as_str();
    let outcome = train_stage(model, data, tc, |r| {
        if r.step % 100 == 0 || r.step + 1 == tc.steps {
            log::info!("{name} step {} loss {:.4} grad_norm {:.4}", r.step, r.loss, r.grad_norm);
        }
    })?;
    let csv = run.path(&format!("metrics_{name}.csv"));
    write_metrics_csv(&csv, &outcome.records)?;
    let ck = run.path(&format!("{name}.ckpt"));
    outcome.checkpoint.save(&ck)?;
    Ok(outcome.records)
}

fn load_into_config(path: &Path, cfg: &ExperimentConfig) -> Result<Model, HarnessError> {
    let ck = Checkpoint::load(path)?;
    Ok(Model::from_params(cfg.model.clone(), ck.params)?)
}

/// Pretrain → warm-up → transplant → main (→ finetune), honouring reused
/// checkpoints and `use_warmup`. Returns the final model.
fn train_chain(cfg: &ExperimentConfig, run: &mut Run, main: bool) -> Result<Model, HarnessError> {
    let data = corpus(cfg);
    let s = &cfg.stages;
    let mut model = match &s.pretrained_checkpoint {
        Some(p) => load_into_config(p, cfg)?,
        None => {
            let mut m = Model::new(cfg.model.clone(), derive(cfg.seed, &[TAG_MODEL]))?;
            run_stage(&mut m, &data, &stage_cfg(cfg, Stage::Pretrain, s.pretrain_steps, TAG_PRETRAIN), run)?;
            m
        }
    };
    let pretrained = Checkpoint::from_model(&model).with_meta("stage", "pretrain");
    if s.use_warmup {
        let warm = match &s.warmup_checkpoint {
            Some(p) => Checkpoint::from_model(&load_into_config(p, cfg)?),
            None => {
                let mut w = Model::from_params(cfg.model.clone(), pretrained.params.clone())?;
                run_stage(&mut w, &data, &stage_cfg(cfg, Stage::Warmup, s.warmup_steps, TAG_WARMUP), run)?;
                Checkpoint::from_model(&w)
            }
        };
        if !main {
            return Ok(warm.into_model()?);
        }
        let assembled = assemble_stage2(&pretrained, &warm)?;
        assembled.save(&run.path("assembled.ckpt"))?;
        model = assembled.into_model()?;
    }
    if main {
        run_stage(&mut model, &data, &stage_cfg(cfg, Stage::Main, s.main_steps, TAG_MAIN), run)?;
        if s.finetune_steps > 0 {
            run_stage(&mut model, &data, &stage_cfg(cfg, Stage::Finetune, s.finetune_steps, TAG_FINETUNE), run)?;
        }
        Checkpoint::from_model(&model).with_meta("stage", "final").save(&run.path("final.ckpt"))?;
    }
    Ok(model)
}

fn load_or_train(cfg: &ExperimentConfig, run: &mut Run) -> Result<Model, HarnessError> {
    match &cfg.generate.checkpoint {
        Some(p) => load_into_config(p, cfg),
        None => train_chain(cfg, run, true),
    }
}

pub fn sampler(cfg: &ExperimentConfig) -> SamplerConfig {
    SamplerConfig { steps: cfg.sampler.steps, seed: derive(cfg.seed, &[TAG_SAMPLER]), tail_frames: cfg.sampler.tail_frames }
}

/// Held-out evaluation of `model` under `cfg`.
pub fn evaluate_config(cfg: &ExperimentConfig, model: &Model) -> Result<(EvalSummary, Vec<ClipEval>), HarnessError> {
    let evals = evaluate(model, &eval_entries(cfg), &sampler(cfg))?;
    Ok((summarize(&evals), evals))
}

fn eval_into(cfg: &ExperimentConfig, model: &Model, run: &mut Run) -> Result<(), HarnessError> {
    let (summary, evals) = evaluate_config(cfg, model)?;
    run.write_json("eval.json", &summary)?;
    let mut csv = String::from("seed,label,sync,predicted,lip_sync,motion_variance,identity_error\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for e in &evals {
        csv += &format!(
            "{},{},{},{},{},{},{}\n",
            e.seed,
            e.label.as_str(),
            e.sync,
            e.predicted.map(|l| l.as_str()).unwrap_or(""),
            opt(e.lip_sync),
            opt(e.motion_variance),
            opt(e.identity_error)
        );
    }
    run.write("eval_clips.csv", csv)
}

pub fn make_backend(cfg: &ExperimentConfig) -> Result<Box<dyn ChatBackend>, HarnessError> {
    match cfg.agents.backend {
        BackendKind::Mock => {
            let script = match &cfg.agents.cue_file {
                Some(p) => MockScript::load(p)?,
                None => MockScript::default(),
            };
            Ok(Box::new(MockBackend::scripted(script)))
        }
        #[cfg(feature = "http")]
        BackendKind::Http => Ok(Box::new(agents::HttpBackend::new(&cfg.agents.base_url, &cfg.agents.model_name))),
        #[cfg(not(feature = "http"))]
        BackendKind::Http => Err(HarnessError::Config("built without the `http` feature".into())),
    }
}

fn session<'b>(cfg: &ExperimentConfig, backend: &'b dyn ChatBackend, log: &Path) -> Result<Session<'b>, HarnessError> {
    let templates = match &cfg.agents.prompts_dir {
        Some(d) => Templates::load_dir(d)?,
        None => Templates::default(),
    };
    let mut s = Session::new(backend).with_transcript(Transcript::logging_to(log)).with_templates(templates);
    s.max_retries = cfg.agents.max_retries;
    Ok(s)
}

fn plan_into(cfg: &ExperimentConfig, backend: &dyn ChatBackend, run: &mut Run) -> Result<MotionSchedule, HarnessError> {
    let log = run.path("transcript.jsonl");
    let mut s = session(cfg, backend, &log)?;
    let a = &cfg.agents;
    let analysis = agents::analyze(&mut s, &a.image_ref, &a.caption, &a.audio_ref, a.user_prompt.as_deref())?.value;
    run.write("analysis.json", serde_json::to_string_pretty(&analysis.to_document()).expect("serializes") + "\n")?;
    let t = cfg.model.latent_frames;
    let n = shots_for_duration(cfg.generate.shots * t, t)?;
    let sched = agents::plan(&mut s, &analysis, &a.image_ref, n, t)?.value;
    run.write("schedule.json", sched.to_json_pretty() + "\n")?;
    Ok(sched)
}

pub fn load_schedule(path: &Path, pass_frames: usize) -> Result<MotionSchedule, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let doc = crate::schedule::extract_json(&text).map_err(|v| HarnessError::Config(v.to_string()))?;
    let n = doc.get("shots").and_then(|s| s.as_array()).map(|s| s.len()).unwrap_or(0);
    validate_schedule(&doc, &ScheduleSpec { pass_frames, expected_shots: n, audio_frames: None })
        .map_err(|v| HarnessError::Config(crate::schedule::format_violations(&v)))
}

/// The toy audio track for a run: a loudness envelope covering `frames`.
pub fn toy_audio(cfg: &ExperimentConfig, frames: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[TAG_AUDIO, cfg.generate.audio_seed]));
    random_envelope(&mut rng, frames)
}

fn generate_into(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), HarnessError> {
    let model = load_or_train(cfg, run)?;
    let backend = make_backend(cfg)?;
    let sched = match &cfg.generate.schedule {
        Some(p) => load_schedule(p, cfg.model.latent_frames)?,
        None => plan_into(cfg, backend.as_ref(), run)?,
    };
    let t = cfg.model.latent_frames;
    let envelope = toy_audio(cfg, sched.shots.len() * t);
    let entry = CorpusEntry { seed: 0, label: crate::toyworld::MotionLabel::Idle, identity: cfg.generate.identity, sync: true };
    let reference = reference_latent(&entry)?;
    let log = run.path("transcript_reflect.jsonl");
    let result = if cfg.generate.reflect {
        let mut s = session(cfg, backend.as_ref(), &log)?;
        let mut hook = ReflectHook { session: &mut s, image_ref: cfg.agents.image_ref.clone(), active_speaker: None };
        generate_long(&model, &sched, &audio_matrix(&envelope), &reference, &sampler(cfg), Some(&mut hook))?
    } else {
        generate_long(&model, &sched, &audio_matrix(&envelope), &reference, &sampler(cfg), None)?
    };
    run.warnings.extend(result.warnings.clone());
    let history: Vec<serde_json::Value> = result.schedules.iter().map(MotionSchedule::to_document).collect();
    run.write_json("schedules.json", &history)?;
    let segments: Vec<serde_json::Value> = result
        .conditions
        .iter()
        .zip(&result.schedules.last().expect("input schedule").shots)
        .map(|(c, shot)| serde_json::json!({"action": shot.action, "text_ids": c.text.ids, "prev_tail_frames": c.first_frames.len()}))
        .collect();
    run.write_json("segments.json", &segments)?;
    write_latents(&run.path("clips.bin"), &result.clips)?;
    Ok(())
}

fn multiperson_into(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), HarnessError> {
    let model = load_or_train(cfg, run)?;
    let m = &cfg.model;
    let n = cfg.generate.speakers.max(1);
    let cells = m.latent_frames * m.height * m.width;
    let speakers: Vec<SpeakerPlan> = (0..n)
        .map(|i| SpeakerPlan {
            speaker: i as u32,
            mask: (0..cells).map(|c| (c % m.width) * n / m.width == i).collect(),
            audio: audio_matrix(&toy_audio(&ExperimentConfig { generate: crate::harness::config::GenerateConfig { audio_seed: cfg.generate.audio_seed + i as u64, ..cfg.generate.clone() }, ..cfg.clone() }, m.latent_frames)),
        })
        .collect();
    let entry = CorpusEntry { seed: 0, label: crate::toyworld::MotionLabel::Idle, identity: cfg.generate.identity, sync: true };
    let scene = SegmentPlan {
        shot: Shot { index: 0, expression: "neutral".into(), action: "idle".into(), duration_frames: m.latent_frames },
        audio: crate::mmdit::Matrix::zeros(m.latent_frames, m.audio_dim),
        prev_tail: Vec::new(),
        reference: reference_latent(&entry)?,
        reasoning: None,
    };
    let clip = multi_person_generate(&model, &scene, &speakers, &sampler(cfg))?;
    write_latents(&run.path("clips.bin"), &[clip])?;
    run.write_json("multiperson.json", &serde_json::json!({"speakers": n, "split": "vertical strips"}))
}

const LATENT_MAGIC: &[u8; 8] = b"DSYSCLIP";

/// Latent clips: magic `DSYSCLIP`, u32 version 1, u64 header length, JSON
/// header `{"clips": [[frames, height, width, channels], ...]}`, then every
/// clip's values as little-endian f64.
pub fn write_latents(path: &Path, clips: &[LatentClip]) -> Result<(), HarnessError> {
    let shapes: Vec<[usize; 4]> = clips.iter().map(|c| [c.frames, c.height, c.width, c.channels]).collect();
    let header = serde_json::to_vec(&serde_json::json!({ "clips": shapes })).expect("serializes");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io(path, e))?);
    let mut w = |b: &[u8]| f.write_all(b).map_err(|e| io(path, e));
    w(LATENT_MAGIC)?;
    w(&1u32.to_le_bytes())?;
    w(&(header.len() as u64).to_le_bytes())?;
    w(&header)?;
    for c in clips {
        for v in &c.values {
            w(&v.to_le_bytes())?;
        }
    }
    f.flush().map_err(|e| io(path, e))
}

pub fn read_latents(path: &Path) -> Result<Vec<LatentClip>, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    let bad = |m: &str| HarnessError::Io(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != LATENT_MAGIC {
        return Err(bad("not a latent clip file"));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    #[derive(Deserialize)]
    struct Header {
        clips: Vec<[usize; 4]>,
    }
    let h: Header = serde_json::from_slice(bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?)
        .map_err(|e| bad(&e.to_string()))?;
    let mut at = 20 + hlen;
    h.clips
        .iter()
        .map(|&[f, hh, w, c]| {
            let n = f * hh * w * c;
            let raw = bytes.get(at..at + 8 * n).ok_or_else(|| bad("truncated data"))?;
            at += 8 * n;
            let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            Ok(LatentClip::from_values(f, hh, w, c, values)?)
        })
        .collect()
}

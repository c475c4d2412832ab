use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_grad_norm, AdamW};
use super::{PipelineError, Result, Stage, TrainConfig};
use crate::flowmatch::{fm_loss_grad, make_flow_batch, FlowError, TSampler};
use crate::mmdit::{Branch, Checkpoint, ConditionSet, ConditioningMode, LatentClip, Matrix, Model, ModelConfig, ModelError};
use crate::toyworld::{audio_features, text, toy_encode, CorpusManifest, ToySample, AUDIO_DIM};
use crate::{par, seed};

/// One conditioned training clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x0: LatentClip,
    pub cond: ConditionSet,
    pub flow_seed: u64,
    pub t_sampler: TSampler,
}

/// `T × A` model audio features of an envelope.
pub fn audio_matrix(envelope: &[f64]) -> Matrix {
    let rows = audio_features(envelope);
    Matrix { rows: rows.len(), cols: AUDIO_DIM, data: rows.into_iter().flatten().collect() }
}

/// Encodes a toy sample and draws its conditioning. The random draws happen
/// in a fixed order whatever the stage or conditioning mode, so switching a
/// mode never shifts another example's randomness.
pub fn build_example<R: Rng>(sample: &ToySample, mcfg: &ModelConfig, cfg: &TrainConfig, rng: &mut R) -> Result<Example> {
    let x0 = toy_encode(&sample.video)?;
    x0.check_shape(mcfg)?;
    if x0.frames != mcfg.latent_frames {
        return Err(PipelineError::Config(format!(
            "toy clips have {} frames but the model expects {}",
            x0.frames, mcfg.latent_frames
        )));
    }
    let u_text: f64 = rng.random();
    let u_audio: f64 = rng.random();
    let u_first: f64 = rng.random();
    let u_last: f64 = rng.random();
    let ref_slot = rng.random_range(0..x0.frames);
    let flow_seed: u64 = rng.random();

    let tokens =
        if u_text < cfg.p_text_drop { text::null_tokens() } else { text::label_tokens(sample.label) };
    let mut cond = ConditionSet::new(tokens, audio_matrix(&sample.envelope));
    let p_audio = if sample.sync_flag { cfg.p_audio_drop } else { cfg.p_audio_drop_unsynced };
    cond.audio_dropped = cfg.stage == Stage::Pretrain || u_audio < p_audio;
    if u_first < cfg.p_first {
        let k = cfg.first_frames.min(x0.frames - 1);
        cond.first_frames = (0..k).map(|f| x0.frame(f).to_vec()).collect();
    }
    match mcfg.conditioning {
        ConditioningMode::PseudoLastFrame | ConditioningMode::None => {
            if cfg.stage != Stage::Pretrain && u_last < cfg.p_last {
                cond.last_frame = Some(x0.frame(x0.frames - 1).to_vec());
            }
        }
        ConditioningMode::RefImage => {
            if cfg.stage != Stage::Pretrain {
                cond.reference = Some(x0.frame(ref_slot).to_vec());
            }
        }
    }
    Ok(Example { x0, cond, flow_seed, t_sampler: cfg.t_sampling })
}

/// Mean loss and mean parameter gradient over a batch. Per-sample passes run
/// through [`par::map_indexed`] and are reduced in index order.
pub fn batch_gradient(model: &Model, examples: &[Example]) -> std::result::Result<(f64, Vec<f64>), FlowError> {
    let per = par::try_map_indexed(examples.len(), |i| -> std::result::Result<(f64, Vec<f64>), FlowError> {
        let ex = &examples[i];
        let fb = make_flow_batch(&ex.x0, ex.flow_seed, ex.t_sampler)?;
        let inp = model.prepare(&fb.xt, fb.t, &ex.cond)?;
        let (v, cache) = model.forward_input(&inp)?;
        let mask = &inp.work.cond_mask[..model.cfg.latent_frames];
        let (loss, dv) = fm_loss_grad(&v, &fb.v_target, mask)?;
        let mut g = model.params.zeros_like();
        model.backward(&inp, &cache, &dv, &mut g);
        Ok((loss, g))
    })?;
    let n = examples.len() as f64;
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in per {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grads.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Global gradient norm after clipping.
    pub grad_norm: f64,
    /// Global gradient norm before clipping.
    pub raw_grad_norm: f64,
    pub lr: f64,
}

const BATCH_TAG: u64 = 0xba7c;

/// Stateful single-stage trainer over a toy corpus.
pub struct Trainer<'a> {
    model: &'a mut Model,
    data: &'a CorpusManifest,
    cfg: TrainConfig,
    opt: AdamW,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut Model, data: &'a CorpusManifest, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(PipelineError::Config("empty training corpus".into()));
        }
        let opt = AdamW::new(model.params.len());
        Ok(Self { model, data, cfg, opt, step: 0 })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// The examples of batch `step`, reproducible from the config seed.
    pub fn batch(&self, step: usize) -> Result<Vec<Example>> {
        let mut pick = ChaCha8Rng::seed_from_u64(seed::derive(self.cfg.seed, &[BATCH_TAG, step as u64]));
        let idx: Vec<usize> = (0..self.cfg.batch_size).map(|_| pick.random_range(0..self.data.len())).collect();
        let (mcfg, cfg) = (&self.model.cfg, &self.cfg);
        par::try_map_indexed(idx.len(), |slot| {
            let sample = self.data.entries[idx[slot]].sample()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[step as u64, slot as u64]));
            build_example(&sample, mcfg, cfg, &mut rng)
        })
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let examples = self.batch(step)?;
        let (loss, mut grads) = match batch_gradient(self.model, &examples) {
            Ok(r) => r,
            Err(FlowError::Model(ModelError::NonFinite(_))) => return Err(PipelineError::NonFiniteLoss { step }),
            Err(e) => return Err(e.into()),
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(PipelineError::NonFiniteLoss { step });
        }
        let raw = clip_grad_norm(&mut grads, self.cfg.grad_clip);
        let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let lr = self.cfg.lr_at(step);
        self.opt.step(self.model.params.data_mut(), &grads, lr, &self.cfg);
        self.step += 1;
        Ok(StepRecord { step, loss, grad_norm, raw_grad_norm: raw, lr })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<StepRecord>,
}

/// Runs `cfg.steps` optimizer steps. `on_step` sees every record as it is
/// produced (progress logging, metrics files).
pub fn train_stage(
    model: &mut Model,
    data: &CorpusManifest,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let mut records = Vec::with_capacity(cfg.steps);
    {
        let mut tr = Trainer::new(model, data, cfg.clone())?;
        for _ in 0..cfg.steps {
            let r = tr.step()?;
            on_step(&r);
            records.push(r);
        }
    }
    let checkpoint = Checkpoint::from_model(model)
        .with_meta("stage", cfg.stage.as_str())
        .with_meta("steps", cfg.steps.to_string())
        .with_meta("seed", cfg.seed.to_string());
    Ok(TrainOutcome { checkpoint, records })
}

/// Stage 1: the full three-branch model trained jointly.
pub fn train_stage1_warmup(model: &mut Model, data: &CorpusManifest, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig { stage: Stage::Warmup, ..cfg.clone() };
    train_stage(model, data, &cfg, |_| {})
}

/// Main training (or fine-tuning, if `cfg.stage` says so) of an assembled model.
pub fn train_main(model: &mut Model, data: &CorpusManifest, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let stage = if cfg.stage == Stage::Finetune { Stage::Finetune } else { Stage::Main };
    let cfg = TrainConfig { stage, ..cfg.clone() };
    train_stage(model, data, &cfg, |_| {})
}

/// Video, text and shared arrays from `pretrained`; audio arrays from
/// `stage1`. Both checkpoints must describe the same architecture.
pub fn assemble_stage2(pretrained: &Checkpoint, stage1: &Checkpoint) -> Result<Checkpoint> {
    if pretrained.config != stage1.config {
        return Err(PipelineError::Transplant("checkpoint configs differ".into()));
    }
    let want: Vec<(&str, &[usize])> =
        pretrained.params.specs().iter().map(|s| (s.name.as_str(), s.shape.as_slice())).collect();
    let missing: Vec<&str> = want
        .iter()
        .filter(|(n, shape)| stage1.params.id(n).map(|id| stage1.params.spec(id).shape.as_slice()) != Some(*shape))
        .map(|(n, _)| *n)
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Transplant(format!("stage-1 checkpoint lacks {}", missing.join(", "))));
    }
    let extra: Vec<&str> = stage1.params.names().filter(|n| pretrained.params.id(n).is_none()).collect();
    if !extra.is_empty() {
        return Err(PipelineError::Transplant(format!("pretrained checkpoint lacks {}", extra.join(", "))));
    }
    let mut out = pretrained.clone();
    for spec in stage1.params.specs() {
        if Branch::of(&spec.name) == Some(Branch::Audio) {
            let src = stage1.params.by_name(&spec.name).expect("name checked");
            out.params.by_name_mut(&spec.name).expect("name checked").copy_from_slice(src);
        }
    }
    out.meta.insert("stage".into(), "assembled".into());
    Ok(out)
}

/// Metrics CSV: header `step,loss,grad_norm,lr`, one row per step;
/// `grad_norm` is the post-clip global norm.
pub fn write_metrics_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss,grad_norm,lr")?;
    for r in records {
        writeln!(f, "{},{},{},{}", r.step, r.loss, r.grad_norm, r.lr)?;
    }
    f.flush()?;
    Ok(())
}

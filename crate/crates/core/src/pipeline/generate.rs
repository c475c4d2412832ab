use super::{PipelineError, Result};
use crate::flowmatch;
use crate::mmdit::{ConditionSet, ConditioningMode, LatentClip, Matrix, Model, ModelConfig, SpeakerMask};
use crate::schedule::{MotionSchedule, Shot};
use crate::seed;
use crate::toyworld::text;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
    /// Clean frames carried from one segment into the next (k).
    pub tail_frames: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 16, seed: 0, tail_frames: 1 }
    }
}

/// Everything one pass is rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPlan {
    pub shot: Shot,
    /// `T × A` audio features for this pass.
    pub audio: Matrix,
    /// Clean latent frames continuing the previous segment.
    pub prev_tail: Vec<Vec<f64>>,
    /// Identity latent frame (the user's reference image, encoded).
    pub reference: Vec<f64>,
    pub reasoning: Option<Matrix>,
}

/// One speaker of a multi-person scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerPlan {
    pub speaker: u32,
    /// `T × H × W` at latent resolution.
    pub mask: Vec<bool>,
    pub audio: Matrix,
}

/// Conditions for one pass. The shot's action goes through the toy keyword
/// table to text tokens; the reference sits in the pseudo last slot, in the
/// reference slot for the ref-image baseline, or nowhere.
pub fn conditions_for(cfg: &ModelConfig, plan: &SegmentPlan) -> Result<ConditionSet> {
    if plan.audio.rows != cfg.latent_frames {
        return Err(PipelineError::Plan(format!(
            "audio segment has {} frames, a pass has {}",
            plan.audio.rows, cfg.latent_frames
        )));
    }
    if plan.reference.len() != cfg.frame_len() {
        return Err(PipelineError::Plan(format!(
            "reference frame has {} values, expected {}",
            plan.reference.len(),
            cfg.frame_len()
        )));
    }
    let tokens = text::label_tokens(text::label_for_action(&plan.shot.action));
    let mut cond = ConditionSet::new(tokens, plan.audio.clone());
    cond.first_frames = plan.prev_tail.clone();
    cond.reasoning = plan.reasoning.clone();
    match cfg.conditioning {
        ConditioningMode::PseudoLastFrame => {
            cond.last_frame = Some(plan.reference.clone());
            cond.pseudo_flag = true;
        }
        ConditioningMode::RefImage => cond.reference = Some(plan.reference.clone()),
        ConditioningMode::None => {}
    }
    cond.validate(cfg)?;
    Ok(cond)
}

/// Renders one pass: `T` latent frames, with any `prev_tail` frames retained
/// at the start.
pub fn generate_clip(model: &Model, plan: &SegmentPlan, sampler: &SamplerConfig) -> Result<LatentClip> {
    let cond = conditions_for(&model.cfg, plan)?;
    Ok(flowmatch::sample(model, &cond, sampler.steps, sampler.seed)?)
}

/// Replans future shots after a segment has been rendered.
pub trait Reflector {
    /// Shots `0..=completed_upto` are final. `Ok` carries the schedule to
    /// continue with plus an optional warning; `Err` means reflection failed
    /// outright and the current schedule is kept.
    fn reflect(
        &mut self,
        schedule: &MotionSchedule,
        completed_upto: usize,
        last_frames: &LatentClip,
    ) -> std::result::Result<(MotionSchedule, Option<String>), String>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongRun {
    pub clips: Vec<LatentClip>,
    /// The conditions each segment was rendered with.
    pub conditions: Vec<ConditionSet>,
    /// The schedule after every reflection (the input schedule first).
    pub schedules: Vec<MotionSchedule>,
    pub warnings: Vec<String>,
}

impl LongRun {
    pub fn concatenated(&self) -> Result<LatentClip> {
        Ok(LatentClip::concat(&self.clips)?)
    }
}

/// Autoregressive synthesis of a whole schedule. `audio` holds per-frame
/// features for the full track (zero-padded to `shots × T` if shorter).
/// Segment `i` uses sampler seed `derive(seed, [i])` and starts from the last
/// `tail_frames` frames of segment `i − 1`.
pub fn generate_long(
    model: &Model,
    schedule: &MotionSchedule,
    audio: &Matrix,
    reference: &[f64],
    sampler: &SamplerConfig,
    mut reflector: Option<&mut dyn Reflector>,
) -> Result<LongRun> {
    let cfg = &model.cfg;
    let t = cfg.latent_frames;
    let n = schedule.shots.len();
    if n == 0 {
        return Err(PipelineError::Plan("schedule has no shots".into()));
    }
    if audio.cols != cfg.audio_dim || audio.rows > n * t {
        return Err(PipelineError::Plan(format!(
            "audio is {}x{}; the schedule covers {} frames of width {}",
            audio.rows,
            audio.cols,
            n * t,
            cfg.audio_dim
        )));
    }
    if sampler.tail_frames >= t {
        return Err(PipelineError::Plan("tail_frames must be smaller than a pass".into()));
    }
    let mut sched = schedule.clone();
    let mut run = LongRun { clips: Vec::new(), conditions: Vec::new(), schedules: vec![sched.clone()], warnings: Vec::new() };
    for i in 0..n {
        let mut seg = Matrix::zeros(t, cfg.audio_dim);
        for f in 0..t {
            if i * t + f < audio.rows {
                seg.data[f * cfg.audio_dim..(f + 1) * cfg.audio_dim].copy_from_slice(audio.row(i * t + f));
            }
        }
        let prev_tail = match run.clips.last() {
            Some(prev) => (t - sampler.tail_frames..t).map(|f| prev.frame(f).to_vec()).collect(),
            None => Vec::new(),
        };
        let plan = SegmentPlan { shot: sched.shots[i].clone(), audio: seg, prev_tail, reference: reference.to_vec(), reasoning: None };
        let cond = conditions_for(cfg, &plan)?;
        let seg_sampler = SamplerConfig { seed: seed::derive(sampler.seed, &[i as u64]), ..*sampler };
        let clip = flowmatch::sample(model, &cond, seg_sampler.steps, seg_sampler.seed)?;
        run.conditions.push(cond);
        run.clips.push(clip);
        if i + 1 < n {
            if let Some(r) = reflector.as_deref_mut() {
                match r.reflect(&sched, i, run.clips.last().expect("just pushed")) {
                    Ok((next, warning)) => {
                        if next.shots.len() != n || next.shots[..=i] != sched.shots[..=i] {
                            run.warnings.push(format!("reflection after shot {i} returned an incompatible schedule; ignored"));
                        } else {
                            sched = next;
                            run.schedules.push(sched.clone());
                        }
                        run.warnings.extend(warning);
                    }
                    Err(e) => run.warnings.push(format!("reflection after shot {i} failed: {e}")),
                }
            }
        }
    }
    Ok(run)
}

/// One shared video stream with several speakers; each speaker's audio may
/// only reach the video cells inside its mask. `scene.audio` is ignored.
pub fn multi_person_generate(
    model: &Model,
    scene: &SegmentPlan,
    speakers: &[SpeakerPlan],
    sampler: &SamplerConfig,
) -> Result<LatentClip> {
    if speakers.is_empty() {
        return Err(PipelineError::Plan("no speakers".into()));
    }
    let cfg = &model.cfg;
    let plan = SegmentPlan { audio: Matrix::zeros(cfg.latent_frames, cfg.audio_dim), ..scene.clone() };
    let mut cond = conditions_for(cfg, &plan)?;
    cond.speaker_masks = speakers
        .iter()
        .map(|s| SpeakerMask { speaker: s.speaker, mask: s.mask.clone(), audio_features: s.audio.clone() })
        .collect();
    cond.validate(cfg)?;
    Ok(flowmatch::sample(model, &cond, sampler.steps, sampler.seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::FlowError;
    use crate::mmdit::ModelError;

    fn cfg() -> ModelConfig {
        ModelConfig { latent_frames: 3, height: 4, width: 4, channels: 2, hidden: 16, depth: 1, heads: 2, ..Default::default() }
    }

    fn shot(i: usize, action: &str) -> Shot {
        Shot { index: i, expression: "calm".into(), action: action.into(), duration_frames: 3 }
    }

    fn model() -> Model {
        let mut m = Model::new(cfg(), 5).unwrap();
        // non-zero output layers so samples depend on the conditions
        for (i, v) in m.params.data_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.01 * ((i % 7) as f64 - 3.0);
            }
        }
        m
    }

    fn schedule(n: usize) -> MotionSchedule {
        MotionSchedule { shots: (0..n).map(|i| shot(i, "walk left")).collect(), source_analysis: Default::default() }
    }

    fn audio(rows: usize) -> Matrix {
        Matrix { rows, cols: 4, data: (0..rows * 4).map(|i| (i as f64 * 0.37).sin().abs()).collect() }
    }

    #[test]
    fn first_segment_conditions() {
        let c = cfg();
        let plan = SegmentPlan { shot: shot(0, "wave"), audio: audio(3), prev_tail: vec![], reference: vec![0.5; c.frame_len()], reasoning: None };
        let cond = conditions_for(&c, &plan).unwrap();
        assert!(cond.first_frames.is_empty());
        assert!(cond.pseudo_flag && cond.last_frame.is_some() && cond.reference.is_none());
        assert_eq!(cond.text, text::label_tokens(crate::toyworld::MotionLabel::Wave));
        let rc = ModelConfig { conditioning: ConditioningMode::RefImage, ..c.clone() };
        let cond = conditions_for(&rc, &plan).unwrap();
        assert!(!cond.pseudo_flag && cond.last_frame.is_none() && cond.reference.is_some());
        let bad = SegmentPlan { audio: audio(2), ..plan };
        assert!(matches!(conditions_for(&c, &bad), Err(PipelineError::Plan(_))));
    }

    #[test]
    fn clip_is_t_frames_and_deterministic() {
        let m = model();
        let plan = SegmentPlan { shot: shot(0, "idle"), audio: audio(3), prev_tail: vec![], reference: vec![0.1; m.cfg.frame_len()], reasoning: None };
        let s = SamplerConfig { steps: 4, seed: 3, tail_frames: 1 };
        let a = generate_clip(&m, &plan, &s).unwrap();
        assert_eq!(a.frames, 3);
        assert_eq!(a, generate_clip(&m, &plan, &s).unwrap());
    }

    #[test]
    fn segments_continue_from_the_previous_tail() {
        let m = model();
        let reference = vec![0.2; m.cfg.frame_len()];
        let s = SamplerConfig { steps: 3, seed: 1, tail_frames: 1 };
        let run = generate_long(&m, &schedule(3), &audio(8), &reference, &s, None).unwrap();
        assert_eq!(run.clips.len(), 3);
        assert_eq!(run.concatenated().unwrap().frames, 9);
        for i in 1..3 {
            assert_eq!(run.conditions[i].first_frames, vec![run.clips[i - 1].frame(2).to_vec()]);
            assert_eq!(run.clips[i].frame(0), run.clips[i - 1].frame(2));
        }
        assert!(run.conditions[0].first_frames.is_empty());
        assert!(generate_long(&m, &schedule(1), &audio(4), &reference, &s, None).is_err());
    }

    struct Scripted(Option<&'static str>);

    impl Reflector for Scripted {
        fn reflect(&mut self, s: &MotionSchedule, upto: usize, _: &LatentClip) -> std::result::Result<(MotionSchedule, Option<String>), String> {
            let Some(action) = self.0 else { return Err("backend down".into()) };
            let mut next = s.clone();
            for sh in next.shots.iter_mut().skip(upto + 1) {
                sh.action = action.into();
            }
            Ok((next, None))
        }
    }

    #[test]
    fn reflection_replaces_future_shots_only() {
        let m = model();
        let reference = vec![0.2; m.cfg.frame_len()];
        let s = SamplerConfig { steps: 3, seed: 1, tail_frames: 1 };
        let plain = generate_long(&m, &schedule(3), &audio(9), &reference, &s, None).unwrap();
        let mut wave = Scripted(Some("wave"));
        let r = generate_long(&m, &schedule(3), &audio(9), &reference, &s, Some(&mut wave)).unwrap();
        assert_eq!(r.clips[0], plain.clips[0]);
        assert_eq!(r.conditions[1].text, text::label_tokens(crate::toyworld::MotionLabel::Wave));
        assert_eq!(r.schedules.len(), 3);
        let mut down = Scripted(None);
        let f = generate_long(&m, &schedule(3), &audio(9), &reference, &s, Some(&mut down)).unwrap();
        assert_eq!(f.clips, plain.clips);
        assert_eq!(f.warnings.len(), 2);
    }

    #[test]
    fn overlapping_speaker_masks_are_rejected() {
        let m = model();
        let c = &m.cfg;
        let cells = c.latent_frames * c.height * c.width;
        let scene = SegmentPlan { shot: shot(0, "idle"), audio: audio(3), prev_tail: vec![], reference: vec![0.0; c.frame_len()], reasoning: None };
        let s = SamplerConfig { steps: 2, ..Default::default() };
        let left: Vec<bool> = (0..cells).map(|i| i % c.width < 2).collect();
        let right: Vec<bool> = left.iter().map(|b| !b).collect();
        let sp = |id, mask: &Vec<bool>| SpeakerPlan { speaker: id, mask: mask.clone(), audio: audio(3) };
        let ok = multi_person_generate(&m, &scene, &[sp(0, &left), sp(1, &right), sp(2, &vec![false; cells])], &s);
        assert_eq!(ok.unwrap().frames, 3);
        let err = multi_person_generate(&m, &scene, &[sp(0, &left), sp(1, &left)], &s).unwrap_err();
        assert!(
            matches!(err, PipelineError::Model(ModelError::InvalidMask(_)) | PipelineError::Flow(FlowError::Model(ModelError::InvalidMask(_)))),
            "{err:?}"
        );
    }
}

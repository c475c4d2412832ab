//! Rectified-flow objective and Euler sampler.
//!
//! Convention: `t = 0` is data, `t = 1` is standard-normal noise, and the
//! network regresses the constant velocity `x1 − x0` of the straight path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mmdit::{ConditionSet, LatentClip, Model, ModelConfig, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("every frame is a condition frame; the loss has no support")]
    DegenerateLoss,
    #[error("step count must be at least 1")]
    InvalidSteps,
    #[error("sampler diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, FlowError>;

/// How the training time is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TSampler {
    #[default]
    Uniform,
    /// `t = sigmoid(m + s·n)` with `n` standard normal: mass in the middle
    /// of the path, little near the ends.
    LogitNormal { mean: f64, std: f64 },
    Fixed(f64),
}

/// One training example of the flow objective.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowBatch {
    pub x0: LatentClip,
    pub x1: Vec<f64>,
    pub t: f64,
    pub xt: LatentClip,
    pub v_target: Vec<f64>,
}

/// Standard-normal latents of the given length, reproducible from `seed`.
pub fn gaussian(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn make_flow_batch(x0: &LatentClip, seed: u64, t_sampler: TSampler) -> Result<FlowBatch> {
    if !x0.is_finite() {
        return Err(FlowError::NonFinite("x0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = match t_sampler {
        TSampler::Uniform => rng.random::<f64>(),
        TSampler::LogitNormal { mean, std } => {
            let n: f64 = rng.sample(StandardNormal);
            1.0 / (1.0 + (-(mean + std * n)).exp())
        }
        TSampler::Fixed(t) => t,
    };
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::Shape(format!("time {t} outside [0, 1]")));
    }
    let x1: Vec<f64> = (0..x0.values.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut xt = x0.clone();
    for ((o, &a), &b) in xt.values.iter_mut().zip(&x0.values).zip(&x1) {
        *o = (1.0 - t) * a + t * b;
    }
    let v_target = x1.iter().zip(&x0.values).map(|(b, a)| b - a).collect();
    Ok(FlowBatch { x0: x0.clone(), x1, t, xt, v_target })
}

fn check_loss_args(pred: &[f64], target: &[f64], cond_mask: &[bool]) -> Result<usize> {
    if pred.len() != target.len() {
        return Err(FlowError::Shape(format!("prediction {} vs target {}", pred.len(), target.len())));
    }
    if cond_mask.is_empty() || !pred.len().is_multiple_of(cond_mask.len()) {
        return Err(FlowError::Shape("condition mask does not divide the clip".into()));
    }
    if cond_mask.iter().all(|&c| c) {
        return Err(FlowError::DegenerateLoss);
    }
    Ok(pred.len() / cond_mask.len())
}

/// Mean squared error over the voxels of non-condition frames.
pub fn fm_loss(pred_v: &[f64], v_target: &[f64], cond_mask: &[bool]) -> Result<f64> {
    Ok(fm_loss_grad(pred_v, v_target, cond_mask)?.0)
}

/// Loss and its gradient with respect to `pred_v` (zero on condition frames).
pub fn fm_loss_grad(pred_v: &[f64], v_target: &[f64], cond_mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let fl = check_loss_args(pred_v, v_target, cond_mask)?;
    let live = cond_mask.iter().filter(|&&c| !c).count();
    let n = (live * fl) as f64;
    let mut grad = vec![0.0; pred_v.len()];
    let mut sum = 0.0;
    for (f, &c) in cond_mask.iter().enumerate() {
        if c {
            continue;
        }
        for i in f * fl..(f + 1) * fl {
            let e = pred_v[i] - v_target[i];
            sum += e * e;
            grad[i] = 2.0 * e / n;
        }
    }
    Ok((sum / n, grad))
}

/// Anything that can predict a velocity for a `T`-frame clip.
pub trait VelocityField {
    fn config(&self) -> &ModelConfig;
    fn velocity(&self, x: &LatentClip, t: f64, cond: &ConditionSet) -> std::result::Result<Vec<f64>, ModelError>;
}

impl VelocityField for Model {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn velocity(&self, x: &LatentClip, t: f64, cond: &ConditionSet) -> std::result::Result<Vec<f64>, ModelError> {
        Ok(self.forward(x, t, cond)?.values)
    }
}

/// Clean frames that live inside the generated clip: first frames at slots
/// `0..k`, and the last frame at `T−1` unless it is a pseudo frame.
pub fn in_clip_conditions(cond: &ConditionSet, cfg: &ModelConfig) -> Vec<(usize, Vec<f64>)> {
    let mut out: Vec<(usize, Vec<f64>)> = cond.first_frames.iter().cloned().enumerate().collect();
    if let (Some(last), false) = (&cond.last_frame, cond.pseudo_flag) {
        out.push((cfg.latent_frames - 1, last.clone()));
    }
    out
}

/// Euler integration from noise (`t = 1`) to data (`t = 0`) in `steps` equal
/// steps, re-clamping in-clip condition frames after every step. Appended
/// frames (pseudo, reference) only exist inside the network call, so the
/// result always has `T` frames.
pub fn sample<F: VelocityField + ?Sized>(field: &F, cond: &ConditionSet, steps: usize, seed: u64) -> Result<LatentClip> {
    if steps == 0 {
        return Err(FlowError::InvalidSteps);
    }
    let cfg = field.config();
    let mut x = LatentClip::for_config(cfg);
    x.values = gaussian(x.values.len(), seed);
    let clamps = in_clip_conditions(cond, cfg);
    let clamp = |x: &mut LatentClip| {
        for (slot, frame) in &clamps {
            x.frame_mut(*slot).copy_from_slice(frame);
            x.cond_mask[*slot] = true;
        }
    };
    clamp(&mut x);
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = 1.0 - i as f64 / steps as f64;
        let v = match field.velocity(&x, t, cond) {
            Ok(v) => v,
            Err(ModelError::NonFinite(_)) => return Err(FlowError::Diverged { step: i }),
            Err(e) => return Err(e.into()),
        };
        if v.len() != x.values.len() {
            return Err(FlowError::Shape(format!("velocity has {} values, clip {}", v.len(), x.values.len())));
        }
        for (a, b) in x.values.iter_mut().zip(&v) {
            *a -= dt * b;
        }
        if !x.is_finite() {
            return Err(FlowError::Diverged { step: i });
        }
        clamp(&mut x);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdit::{Matrix, TextTokens};

    #[test]
    fn batch_endpoints_and_midpoint() {
        let x0 = LatentClip::from_values(1, 1, 1, 1, vec![0.0]).unwrap();
        let b = make_flow_batch(&x0, 1, TSampler::Fixed(0.0)).unwrap();
        assert_eq!(b.xt.values, x0.values);
        let b = make_flow_batch(&x0, 1, TSampler::Fixed(1.0)).unwrap();
        assert_eq!(b.xt.values, b.x1);
        let b = make_flow_batch(&x0, 1, TSampler::Fixed(0.5)).unwrap();
        // with x1 = 2 the midpoint would be 1 and the target 2
        let (xt, v) = (0.5 * b.x1[0], b.x1[0]);
        assert_eq!(b.xt.values[0], xt);
        assert_eq!(b.v_target[0], v);
    }

    #[test]
    fn logit_normal_times_concentrate_mid_path() {
        let x0 = LatentClip::from_values(1, 1, 1, 1, vec![0.0]).unwrap();
        let ln = TSampler::LogitNormal { mean: 0.0, std: 1.0 };
        let ts: Vec<f64> = (0..2000).map(|s| make_flow_batch(&x0, s, ln).unwrap().t).collect();
        assert!(ts.iter().all(|t| *t > 0.0 && *t < 1.0));
        let mid = ts.iter().filter(|t| (0.25..0.75).contains(*t)).count() as f64 / ts.len() as f64;
        // P(|n| < logit(0.75)) for a standard normal is about 0.73; uniform gives 0.5
        assert!((mid - 0.73).abs() < 0.04, "{mid}");
        assert_eq!(make_flow_batch(&x0, 9, ln).unwrap().t, make_flow_batch(&x0, 9, ln).unwrap().t);
    }

    #[test]
    fn loss_examples() {
        let target = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(fm_loss(&target, &target, &[false, false]).unwrap(), 0.0);
        let off: Vec<f64> = target.iter().map(|v| v + 1.0).collect();
        assert_eq!(fm_loss(&off, &target, &[false, false]).unwrap(), 1.0);
        let mut inside = target.clone();
        inside[0] += 5.0;
        assert_eq!(fm_loss(&inside, &target, &[true, false]).unwrap(), 0.0);
        assert_eq!(fm_loss(&target, &target, &[true, true]), Err(FlowError::DegenerateLoss));
    }

    struct Oracle {
        cfg: ModelConfig,
        x0: Vec<f64>,
        x1: Vec<f64>,
    }

    impl VelocityField for Oracle {
        fn config(&self) -> &ModelConfig {
            &self.cfg
        }
        fn velocity(&self, _: &LatentClip, _: f64, _: &ConditionSet) -> std::result::Result<Vec<f64>, ModelError> {
            Ok(self.x1.iter().zip(&self.x0).map(|(a, b)| a - b).collect())
        }
    }

    #[test]
    fn oracle_field_recovers_data() {
        let cfg = ModelConfig { latent_frames: 2, height: 4, width: 4, ..Default::default() };
        let n = 2 * cfg.frame_len();
        let x0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let oracle = Oracle { cfg: cfg.clone(), x0: x0.clone(), x1: gaussian(n, 11) };
        let cond = ConditionSet::new(TextTokens::default(), Matrix::zeros(2, 4));
        for steps in [1, 2, 3, 7, 50] {
            let out = sample(&oracle, &cond, steps, 11).unwrap();
            assert!(crate::linalg::max_abs_diff(&out.values, &x0) <= 1e-9);
        }
        assert_eq!(sample(&oracle, &cond, 0, 11), Err(FlowError::InvalidSteps));
    }

    #[test]
    fn diverging_field_reports_step() {
        struct Nan(ModelConfig);
        impl VelocityField for Nan {
            fn config(&self) -> &ModelConfig {
                &self.0
            }
            fn velocity(&self, x: &LatentClip, t: f64, _: &ConditionSet) -> std::result::Result<Vec<f64>, ModelError> {
                Ok(vec![if t < 0.6 { f64::NAN } else { 0.0 }; x.values.len()])
            }
        }
        let cfg = ModelConfig { latent_frames: 1, height: 2, width: 2, ..Default::default() };
        let cond = ConditionSet::new(TextTokens::default(), Matrix::zeros(1, 4));
        assert_eq!(sample(&Nan(cfg), &cond, 4, 0), Err(FlowError::Diverged { step: 2 }));
    }
}

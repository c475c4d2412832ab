//! The full renderer: embeddings, blocks, final projection, and the
//! hand-written backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{Block, BlockCache, BlockCtx, BranchLayers, CrossCtx, CrossLayers, Linear};
use super::layout::{assemble, full_layout, patchify, unpatchify, WorkingClip};
use super::params::{Init, ParamId, ParamStore};
use super::{
    build_attention_mask, rope_positions, AttendMatrix, AudioInjection, ConditionSet, FrameRole, LatentClip, Matrix,
    ModelConfig, ModelError, Result, RopeTable, TokenLayout,
};
use crate::linalg::{layer_norm, layer_norm_backward, silu, silu_grad};

#[derive(Clone, Debug)]
struct Layers {
    time_fc1: Linear,
    time_fc2: Linear,
    patch: Linear,
    cond_embed: ParamId,
    text_embed: ParamId,
    audio_in: Linear,
    blocks: Vec<Block>,
    final_mod: Linear,
    final_proj: Linear,
    final_skip: Linear,
}

/// Branch selectors used by [`Block`]: row ranges are video, text, audio.
const VIDEO: usize = 0;
const TEXT: usize = 1;
const AUDIO: usize = 2;

impl Layers {
    fn register(cfg: &ModelConfig, p: &mut ParamStore) -> Self {
        let d = cfg.hidden;
        let ffn = d * cfg.ffn_mult;
        let time_fc1 = Linear::register(p, "shared.time.fc1", cfg.time_freq_dim, d, true, Linear::std(cfg.time_freq_dim));
        let time_fc2 = Linear::register(p, "shared.time.fc2", d, d, true, Linear::std(d));
        let patch = Linear::register(p, "video.patch", cfg.patch_dim(), d, true, Linear::std(cfg.patch_dim()));
        let cond_embed = p.register("video.cond_embed", &[d], Init::Normal(0.5));
        let text_embed = p.register("text.embed", &[cfg.text_vocab, d], Init::Normal(1.0));
        // Audio features are few and mostly move together, so `x·W` alone is
        // nearly one direction scaled by loudness, which the branch layer norm
        // would erase. A random bias gives every token a common offset that
        // keeps loudness visible after normalization.
        let audio_in = Linear::register_offset(
            p,
            "audio.in_proj",
            cfg.audio_in_dim(),
            d,
            Linear::std(cfg.audio_in_dim()),
            Init::Normal(1.0),
        );
        let blocks = (0..cfg.depth)
            .map(|i| {
                let mut branches = vec![
                    (VIDEO, BranchLayers::register(p, &format!("video.blocks.{i}"), d, ffn)),
                    (TEXT, BranchLayers::register(p, &format!("text.blocks.{i}"), d, ffn)),
                ];
                let cross = match cfg.audio_injection {
                    AudioInjection::SymmetricBranch => {
                        branches.push((AUDIO, BranchLayers::register(p, &format!("audio.blocks.{i}"), d, ffn)));
                        None
                    }
                    AudioInjection::CrossAttention => Some(CrossLayers::register(p, &format!("audio.blocks.{i}.xattn"), d)),
                };
                Block { branches, cross }
            })
            .collect();
        let final_mod = Linear::register(p, "video.final.mod", d, 2 * d, true, Init::Zero);
        let final_proj = Linear::register(p, "video.final.proj", d, cfg.patch_dim(), true, Init::Zero);
        let final_skip = Linear::register(p, "video.final.skip", d, cfg.channels, true, Init::Zero);
        Self { time_fc1, time_fc2, patch, cond_embed, text_embed, audio_in, blocks, final_mod, final_proj, final_skip }
    }
}

/// Everything derived from (latents, t, conditions) before the network runs.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub work: WorkingClip,
    pub layout: TokenLayout,
    pub t: f64,
    pub attend: AttendMatrix,
    text_ids: Vec<u32>,
    audio_in: Vec<f64>,
    joint: usize,
    rope_joint: RopeTable,
    joint_mask: Option<Vec<bool>>,
    rope_cross_q: RopeTable,
    rope_cross_k: RopeTable,
    cross_mask: Option<Vec<bool>>,
}

impl ModelInput {
    fn ctx(&self, cfg: &ModelConfig, cross: bool) -> BlockCtx<'_> {
        BlockCtx {
            d: cfg.hidden,
            heads: cfg.heads,
            ranges: [self.layout.video_range(), self.layout.text_range(), self.layout.audio_range()],
            joint: self.joint,
            rope: &self.rope_joint,
            joint_mask: self.joint_mask.as_deref(),
            cross: cross.then_some(CrossCtx {
                rope_q: &self.rope_cross_q,
                rope_k: &self.rope_cross_k,
                mask: self.cross_mask.as_deref(),
            }),
        }
    }

    /// Number of video tokens belonging to generated (non-appended) frames.
    fn n_generated_tokens(&self, cfg: &ModelConfig) -> usize {
        cfg.latent_frames * cfg.tokens_per_frame()
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    freq: Vec<f64>,
    h1: Vec<f64>,
    a1: Vec<f64>,
    temb: Vec<f64>,
    s: Vec<f64>,
    patches: Vec<f64>,
    blocks: Vec<BlockCache>,
    modf: Vec<f64>,
    fxn: Vec<f64>,
    frstd: Vec<f64>,
    fh: Vec<f64>,
}

/// Token arrays for one block call.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTokens {
    pub video: Matrix,
    pub text: Matrix,
    pub audio: Matrix,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    layers: Layers,
}

/// Sinusoidal features of `t` (scaled to [0, 1000]): cosines then sines.
pub fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let tt = t * 1000.0;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let f = (-(10000f64).ln() * j as f64 / half as f64).exp();
        out[j] = (tt * f).cos();
        out[half + j] = (tt * f).sin();
    }
    out
}

impl Model {
    /// Randomly initialized model; the same seed always yields the same weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layers = Layers::register(&cfg, &mut params);
        params.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { cfg, params, layers })
    }

    /// Rebuilds a model around existing parameters, checking the name/shape set.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let mut fresh = ParamStore::new();
        let layers = Layers::register(&cfg, &mut fresh);
        let expect: Vec<(&str, &[usize])> = fresh.specs().iter().map(|s| (s.name.as_str(), s.shape.as_slice())).collect();
        let got: Vec<(&str, &[usize])> = params.specs().iter().map(|s| (s.name.as_str(), s.shape.as_slice())).collect();
        if expect != got {
            let missing: Vec<&str> =
                expect.iter().filter(|e| !got.contains(e)).map(|e| e.0).collect();
            let extra: Vec<&str> = got.iter().filter(|g| !expect.contains(g)).map(|g| g.0).collect();
            return Err(ModelError::Checkpoint(format!(
                "parameter set does not match config (missing or reshaped: {missing:?}; unexpected: {extra:?})"
            )));
        }
        fresh.data_mut().copy_from_slice(params.data());
        Ok(Self { cfg, params: fresh, layers })
    }

    /// Time embedding fed to every modulation (before the SiLU).
    pub fn timestep_embedding(&self, t: f64) -> Vec<f64> {
        let freq = timestep_features(t, self.cfg.time_freq_dim);
        let h1 = self.layers.time_fc1.forward(&self.params, &freq);
        let a1: Vec<f64> = h1.iter().map(|&v| silu(v)).collect();
        self.layers.time_fc2.forward(&self.params, &a1)
    }

    /// Patch embedding of a clip; condition flags become per-token flags and
    /// add a learned condition embedding.
    pub fn embed_video(&self, clip: &LatentClip) -> Result<(Matrix, TokenLayout)> {
        let cfg = &self.cfg;
        clip.check_shape(cfg)?;
        if clip.frames != cfg.latent_frames {
            return Err(ModelError::Shape(format!("clip has {} frames, expected {}", clip.frames, cfg.latent_frames)));
        }
        if !clip.is_finite() {
            return Err(ModelError::NonFinite("latents"));
        }
        let roles = (0..clip.frames).map(FrameRole::Generated).collect();
        let layout = TokenLayout::video_only(cfg, roles, &clip.cond_mask);
        let patches = patchify(&clip.values, clip.frames, cfg);
        let tokens = self.embed_patches(&patches, &layout);
        Ok((Matrix::from_vec(layout.n_video, cfg.hidden, tokens)?, layout))
    }

    fn embed_patches(&self, patches: &[f64], layout: &TokenLayout) -> Vec<f64> {
        let d = self.cfg.hidden;
        let mut x = self.layers.patch.forward(&self.params, patches);
        let ce = self.params.get(self.layers.cond_embed);
        for (row, tok) in x.chunks_exact_mut(d).zip(&layout.tokens) {
            if tok.cond {
                for (a, b) in row.iter_mut().zip(ce) {
                    *a += b;
                }
            }
        }
        x
    }

    fn audio_rows(&self, features: &Matrix, reasoning: Option<&Matrix>) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let t = cfg.latent_frames;
        if features.rows != t || features.cols != cfg.audio_dim {
            return Err(ModelError::Shape(format!(
                "audio features {}x{}, expected {t}x{}",
                features.rows, features.cols, cfg.audio_dim
            )));
        }
        if let Some(r) = reasoning {
            if r.rows != features.rows {
                return Err(ModelError::Shape(format!("reasoning has {} frames, audio has {}", r.rows, features.rows)));
            }
            if r.cols != cfg.reasoning_dim {
                return Err(ModelError::Shape(format!("reasoning width {}, expected {}", r.cols, cfg.reasoning_dim)));
            }
        }
        let w = cfg.audio_in_dim();
        let mut out = vec![0.0; t * w];
        for f in 0..t {
            let row = &mut out[f * w..(f + 1) * w];
            row[..cfg.audio_dim].copy_from_slice(features.row(f));
            if let Some(r) = reasoning {
                row[cfg.audio_dim..].copy_from_slice(r.row(f));
            }
        }
        Ok(out)
    }

    /// One token per frame from `[features ∥ reasoning]`. Missing reasoning
    /// under a config that expects it is zero-filled.
    pub fn embed_audio(&self, features: &Matrix, reasoning: Option<&Matrix>) -> Result<Matrix> {
        let rows = self.audio_rows(features, reasoning)?;
        let tokens = self.layers.audio_in.forward(&self.params, &rows);
        Matrix::from_vec(self.cfg.latent_frames, self.cfg.hidden, tokens)
    }

    /// Assembles the working clip, layout, positions and masks.
    pub fn prepare(&self, latents: &LatentClip, t: f64, cond: &ConditionSet) -> Result<ModelInput> {
        let cfg = &self.cfg;
        if !t.is_finite() {
            return Err(ModelError::NonFinite("timestep"));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(ModelError::Shape(format!("timestep {t} outside [0, 1]")));
        }
        let work = assemble(latents, cond, cfg)?;
        let layout = full_layout(cfg, &work, cond);
        let mut attend = build_attention_mask(&layout, &cond.speaker_masks)?;
        if cond.audio_dropped {
            attend.isolate_audio(&layout);
        }
        let mut audio_in = Vec::new();
        if cond.speaker_masks.is_empty() {
            audio_in = self.audio_rows(&cond.audio_features, cond.reasoning.as_ref())?;
        } else {
            for s in &cond.speaker_masks {
                audio_in.extend(self.audio_rows(&s.audio_features, cond.reasoning.as_ref())?);
            }
        }
        let rope_all = RopeTable::build(cfg, &rope_positions(cfg, &layout, cond.pseudo_flag)?);
        let cross = cfg.audio_injection == AudioInjection::CrossAttention;
        let joint = if cross { layout.n_video + layout.n_text } else { layout.len() };
        Ok(ModelInput {
            text_ids: cond.text.ids.clone(),
            audio_in,
            joint,
            rope_joint: rope_all.rows(0..joint),
            joint_mask: attend.block(0..joint, 0..joint),
            rope_cross_q: rope_all.rows(layout.video_range()),
            rope_cross_k: rope_all.rows(layout.audio_range()),
            cross_mask: attend.block(layout.video_range(), layout.audio_range()),
            work,
            layout,
            t,
            attend,
        })
    }

    fn check_cross(&self, cross_expected: bool) -> Result<()> {
        let is_cross = self.cfg.audio_injection == AudioInjection::CrossAttention;
        if is_cross != cross_expected {
            return Err(ModelError::Config(format!("model audio injection is {:?}", self.cfg.audio_injection)));
        }
        Ok(())
    }

    /// Predicted velocity for the `T` generated frames.
    pub fn forward(&self, latents: &LatentClip, t: f64, cond: &ConditionSet) -> Result<LatentClip> {
        let inp = self.prepare(latents, t, cond)?;
        let (v, _) = self.forward_input(&inp)?;
        let cfg = &self.cfg;
        let mut out = LatentClip::from_values(cfg.latent_frames, cfg.height, cfg.width, cfg.channels, v)?;
        out.cond_mask = inp.work.cond_mask[..cfg.latent_frames].to_vec();
        Ok(out)
    }

    /// [`Model::forward`] for a model built with cross-attention audio
    /// injection; errors on a symmetric-branch model.
    pub fn cross_attention_variant(&self, latents: &LatentClip, t: f64, cond: &ConditionSet) -> Result<LatentClip> {
        self.check_cross(true)?;
        self.forward(latents, t, cond)
    }

    /// Runs block `index` on explicit token arrays. The layout supplies
    /// positions; `temb` is the time embedding (see [`Model::timestep_embedding`]).
    pub fn mmdit_block(
        &self,
        index: usize,
        tokens: &BlockTokens,
        temb: &[f64],
        layout: &TokenLayout,
        attend: &AttendMatrix,
    ) -> Result<BlockTokens> {
        let cfg = &self.cfg;
        let d = cfg.hidden;
        let block = self
            .layers
            .blocks
            .get(index)
            .ok_or_else(|| ModelError::Shape(format!("block {index} of {}", cfg.depth)))?;
        let want = [(layout.n_video, &tokens.video), (layout.n_text, &tokens.text), (layout.n_audio, &tokens.audio)];
        for (n, m) in want {
            if m.rows != n || m.cols != d {
                return Err(ModelError::Shape(format!("token array {}x{}, expected {n}x{d}", m.rows, m.cols)));
            }
        }
        if temb.len() != d || attend.len() != layout.len() {
            return Err(ModelError::Shape("time embedding or attend matrix size".into()));
        }
        let pseudo = layout.frame_roles.contains(&FrameRole::Pseudo);
        let rope_all = RopeTable::build(cfg, &rope_positions(cfg, layout, pseudo)?);
        let cross = block.cross.is_some();
        let joint = if cross { layout.n_video + layout.n_text } else { layout.len() };
        let rope_joint = rope_all.rows(0..joint);
        let joint_mask = attend.block(0..joint, 0..joint);
        let rope_q = rope_all.rows(layout.video_range());
        let rope_k = rope_all.rows(layout.audio_range());
        let cross_mask = attend.block(layout.video_range(), layout.audio_range());
        let ctx = BlockCtx {
            d,
            heads: cfg.heads,
            ranges: [layout.video_range(), layout.text_range(), layout.audio_range()],
            joint,
            rope: &rope_joint,
            joint_mask: joint_mask.as_deref(),
            cross: cross.then_some(CrossCtx { rope_q: &rope_q, rope_k: &rope_k, mask: cross_mask.as_deref() }),
        };
        let mut x = tokens.video.data.clone();
        x.extend_from_slice(&tokens.text.data);
        x.extend_from_slice(&tokens.audio.data);
        let s: Vec<f64> = temb.iter().map(|&v| silu(v)).collect();
        let (y, _) = block.forward(&self.params, &x, &s, &ctx);
        let (nv, nt) = (layout.n_video, layout.n_text);
        Ok(BlockTokens {
            video: Matrix::from_vec(nv, d, y[..nv * d].to_vec())?,
            text: Matrix::from_vec(nt, d, y[nv * d..(nv + nt) * d].to_vec())?,
            audio: Matrix::from_vec(layout.n_audio, d, y[(nv + nt) * d..].to_vec())?,
        })
    }

    /// Forward on a prepared input, keeping activations for [`Model::backward`].
    /// Returns the velocity for the generated frames (`T × H × W × C`).
    pub fn forward_input(&self, inp: &ModelInput) -> Result<(Vec<f64>, ForwardCache)> {
        let cfg = &self.cfg;
        let p = &self.params;
        let l = &self.layers;
        let d = cfg.hidden;

        let freq = timestep_features(inp.t, cfg.time_freq_dim);
        let h1 = l.time_fc1.forward(p, &freq);
        let a1: Vec<f64> = h1.iter().map(|&v| silu(v)).collect();
        let temb = l.time_fc2.forward(p, &a1);
        let s: Vec<f64> = temb.iter().map(|&v| silu(v)).collect();

        let patches = patchify(&inp.work.values, inp.work.frames(), cfg);
        let mut x = self.embed_patches(&patches, &inp.layout);
        let emb = p.get(l.text_embed);
        for &id in &inp.text_ids {
            x.extend_from_slice(&emb[id as usize * d..(id as usize + 1) * d]);
        }
        x.extend(l.audio_in.forward(p, &inp.audio_in));
        debug_assert_eq!(x.len(), inp.layout.len() * d);

        let ctx = inp.ctx(cfg, cfg.audio_injection == AudioInjection::CrossAttention);
        let mut caches = Vec::with_capacity(l.blocks.len());
        for b in &l.blocks {
            let (y, c) = b.forward(p, &x, &s, &ctx);
            caches.push(c);
            x = y;
        }

        let ng = inp.n_generated_tokens(cfg);
        let modf = l.final_mod.forward(p, &s);
        let (fxn, frstd) = layer_norm(&x[..ng * d], d);
        let fh = super::block::modulate(&fxn, &modf[..d], &modf[d..]);
        let out = l.final_proj.forward(p, &fh);
        let mut v = unpatchify(&out, cfg.latent_frames, cfg);
        let gain = l.final_skip.forward(p, &s);
        for (o, (x, g)) in v.iter_mut().zip(inp.work.values.iter().zip(gain.iter().cycle())) {
            *o += g * x;
        }
        if !v.iter().all(|a| a.is_finite()) {
            return Err(ModelError::NonFinite("velocity"));
        }
        Ok((v, ForwardCache { freq, h1, a1, temb, s, patches, blocks: caches, modf, fxn, frstd, fh }))
    }

    /// Accumulates `∂L/∂θ` into `grads` given `dvel = ∂L/∂velocity`.
    pub fn backward(&self, inp: &ModelInput, cache: &ForwardCache, dvel: &[f64], grads: &mut [f64]) {
        let cfg = &self.cfg;
        let p = &self.params;
        let l = &self.layers;
        let d = cfg.hidden;
        assert_eq!(grads.len(), p.len(), "gradient buffer size");
        assert_eq!(dvel.len(), cfg.latent_frames * cfg.frame_len(), "velocity gradient size");

        let ng = inp.n_generated_tokens(cfg);
        let c = cfg.channels;
        let mut dgain = vec![0.0; c];
        for (i, (g, x)) in dvel.iter().zip(&inp.work.values).enumerate() {
            dgain[i % c] += g * x;
        }
        let mut ds = vec![0.0; d];
        l.final_skip.backward(p, &cache.s, &dgain, grads, Some(&mut ds));
        let dout = patchify(dvel, cfg.latent_frames, cfg);
        let dfh = l.final_proj.backward_dx(p, &cache.fh, &dout, grads);
        let mut dmodf = vec![0.0; 2 * d];
        let (dsh, dsc) = dmodf.split_at_mut(d);
        let dfxn = super::block::modulate_backward(&cache.fxn, &cache.modf[d..], &dfh, dsh, dsc);
        let mut dx = vec![0.0; inp.layout.len() * d];
        layer_norm_backward(&cache.fxn, &cache.frstd, &dfxn, d, &mut dx[..ng * d]);
        l.final_mod.backward(p, &cache.s, &dmodf, grads, Some(&mut ds));

        let ctx = inp.ctx(cfg, cfg.audio_injection == AudioInjection::CrossAttention);
        for (b, c) in l.blocks.iter().zip(&cache.blocks).rev() {
            dx = b.backward(p, c, &dx, &cache.s, &ctx, grads, &mut ds);
        }

        let layout = &inp.layout;
        let vr = layout.video_range();
        l.patch.backward(p, &cache.patches, &dx[..vr.end * d], grads, None);
        let ce = p.range(l.cond_embed);
        for (row, tok) in dx.chunks_exact(d).zip(&layout.tokens[vr.clone()]) {
            if tok.cond {
                for (g, v) in grads[ce.clone()].iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let te = p.range(l.text_embed);
        for (i, &id) in inp.text_ids.iter().enumerate() {
            let row = &dx[(vr.end + i) * d..(vr.end + i + 1) * d];
            let dst = te.start + id as usize * d;
            for (g, v) in grads[dst..dst + d].iter_mut().zip(row) {
                *g += v;
            }
        }
        let ar = layout.audio_range();
        l.audio_in.backward(p, &inp.audio_in, &dx[ar.start * d..], grads, None);

        let dtemb: Vec<f64> = ds.iter().zip(&cache.temb).map(|(g, &z)| g * silu_grad(z)).collect();
        let da1 = l.time_fc2.backward_dx(p, &cache.a1, &dtemb, grads);
        let dh1: Vec<f64> = da1.iter().zip(&cache.h1).map(|(g, &z)| g * silu_grad(z)).collect();
        l.time_fc1.backward(p, &cache.freq, &dh1, grads, None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdit::{ConditioningMode, SpeakerMask, TextTokens};
    use rand::Rng;

    fn tiny(injection: AudioInjection, reasoning: usize) -> ModelConfig {
        ModelConfig {
            latent_frames: 2,
            height: 4,
            width: 4,
            channels: 2,
            patch: 2,
            hidden: 8,
            depth: 1,
            heads: 2,
            audio_dim: 3,
            text_vocab: 6,
            text_max_len: 4,
            pseudo_gap: 2,
            reasoning_dim: reasoning,
            ffn_mult: 2,
            time_freq_dim: 8,
            rope_theta: 10.0,
            conditioning: ConditioningMode::PseudoLastFrame,
            audio_injection: injection,
        }
    }

    fn randomize(m: &mut Model, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in m.params.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }

    fn random_inputs(cfg: &ModelConfig, seed: u64) -> (LatentClip, ConditionSet, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clip = LatentClip::for_config(cfg);
        clip.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let audio = Matrix::from_vec(
            cfg.latent_frames,
            cfg.audio_dim,
            (0..cfg.latent_frames * cfg.audio_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let mut cond = ConditionSet::new(TextTokens::sequential(vec![1, 4, 2]), audio);
        let fl = cfg.frame_len();
        cond.first_frames = vec![(0..fl).map(|_| rng.random_range(-1.0..1.0)).collect()];
        cond.last_frame = Some((0..fl).map(|_| rng.random_range(-1.0..1.0)).collect());
        cond.pseudo_flag = true;
        if cfg.reasoning_dim > 0 {
            let n = cfg.latent_frames * cfg.reasoning_dim;
            cond.reasoning =
                Some(Matrix::from_vec(cfg.latent_frames, cfg.reasoning_dim, (0..n).map(|i| (i as f64).sin()).collect()).unwrap());
        }
        let target = (0..cfg.latent_frames * fl).map(|_| rng.random_range(-1.0..1.0)).collect();
        (clip, cond, target)
    }

    /// Weighted sum of velocities: a linear functional makes the check sharp.
    fn loss(m: &Model, clip: &LatentClip, cond: &ConditionSet, w: &[f64]) -> f64 {
        let inp = m.prepare(clip, 0.37, cond).unwrap();
        let (v, _) = m.forward_input(&inp).unwrap();
        v.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn check_grads(cfg: ModelConfig) {
        let mut m = Model::new(cfg.clone(), 3).unwrap();
        randomize(&mut m, 5);
        let (clip, cond, w) = random_inputs(&cfg, 9);
        let inp = m.prepare(&clip, 0.37, &cond).unwrap();
        let (_, cache) = m.forward_input(&inp).unwrap();
        let mut g = m.params.zeros_like();
        m.backward(&inp, &cache, &w, &mut g);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..m.params.len() {
            let orig = m.params.data()[i];
            m.params.data_mut()[i] = orig + h;
            let lp = loss(&m, &clip, &cond, &w);
            m.params.data_mut()[i] = orig - h;
            let lm = loss(&m, &clip, &cond, &w);
            m.params.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_symmetric() {
        check_grads(tiny(AudioInjection::SymmetricBranch, 0));
    }

    #[test]
    fn gradients_match_finite_differences_cross_attention_with_reasoning() {
        check_grads(tiny(AudioInjection::CrossAttention, 2));
    }

    #[test]
    fn zero_parameters_give_zero_velocity() {
        let cfg = tiny(AudioInjection::SymmetricBranch, 0);
        let mut m = Model::new(cfg.clone(), 1).unwrap();
        m.params.data_mut().fill(0.0);
        let (clip, cond, _) = random_inputs(&cfg, 2);
        let v = m.forward(&clip, 0.5, &cond).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
        assert_eq!(v.values.len(), clip.values.len());
    }

    #[test]
    fn symmetric_branches_have_equal_block_parameter_counts() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        let p = &m.params;
        assert_eq!(p.count_with_prefix("audio.blocks."), p.count_with_prefix("text.blocks."));
        assert_eq!(p.count_with_prefix("audio.blocks."), p.count_with_prefix("video.blocks."));
    }

    #[test]
    fn speaker_masks_route_attention() {
        let cfg = tiny(AudioInjection::SymmetricBranch, 0);
        let mut m = Model::new(cfg.clone(), 1).unwrap();
        randomize(&mut m, 2);
        let (clip, mut cond, _) = random_inputs(&cfg, 3);
        let cells = cfg.latent_frames * cfg.height * cfg.width;
        let left: Vec<bool> = (0..cells).map(|i| i % cfg.width < 2).collect();
        let right: Vec<bool> = left.iter().map(|b| !b).collect();
        let feats = cond.audio_features.clone();
        cond.speaker_masks = vec![
            SpeakerMask { speaker: 1, mask: left, audio_features: feats.clone() },
            SpeakerMask { speaker: 2, mask: right, audio_features: feats },
        ];
        let inp = m.prepare(&clip, 0.5, &cond).unwrap();
        assert_eq!(inp.layout.n_audio, 2 * cfg.latent_frames);
        assert!(m.forward(&clip, 0.5, &cond).unwrap().is_finite());
    }

    #[test]
    fn audio_dropout_zeroes_audio_gradients() {
        let cfg = tiny(AudioInjection::SymmetricBranch, 0);
        let mut m = Model::new(cfg.clone(), 1).unwrap();
        randomize(&mut m, 4);
        let (clip, mut cond, w) = random_inputs(&cfg, 5);
        cond.audio_dropped = true;
        let inp = m.prepare(&clip, 0.2, &cond).unwrap();
        let (_, cache) = m.forward_input(&inp).unwrap();
        let mut g = m.params.zeros_like();
        m.backward(&inp, &cache, &w, &mut g);
        for s in m.params.specs() {
            if s.name.starts_with("audio.") {
                assert!(g[s.offset..s.offset + s.len()].iter().all(|&x| x == 0.0), "{}", s.name);
            }
        }
    }

    #[test]
    fn from_params_rejects_mismatched_sets() {
        let a = Model::new(tiny(AudioInjection::SymmetricBranch, 0), 0).unwrap();
        let err = Model::from_params(tiny(AudioInjection::CrossAttention, 0), a.params.clone()).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(_)));
        let b = Model::from_params(a.cfg.clone(), a.params.clone()).unwrap();
        assert_eq!(a.params.data(), b.params.data());
    }
}

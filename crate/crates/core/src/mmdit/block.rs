//! Layers and the joint MMDiT block, each with an explicit backward pass.

use std::ops::Range;

use super::params::{Init, ParamId, ParamStore};
use super::rope::RopeTable;
use crate::linalg::{gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, MatMut, MatRef};

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn register(p: &mut ParamStore, name: &str, inp: usize, out: usize, bias: bool, w_init: Init) -> Self {
        let w = p.register(format!("{name}.w"), &[inp, out], w_init);
        let b = bias.then(|| p.register(format!("{name}.b"), &[out], Init::Zero));
        Self { w, b, inp, out }
    }

    /// A biased layer whose bias starts random rather than zero.
    pub fn register_offset(p: &mut ParamStore, name: &str, inp: usize, out: usize, w_init: Init, b_init: Init) -> Self {
        let w = p.register(format!("{name}.w"), &[inp, out], w_init);
        let b = Some(p.register(format!("{name}.b"), &[out], b_init));
        Self { w, b, inp, out }
    }

    /// Fan-in scaled normal initialization.
    pub fn std(inp: usize) -> Init {
        Init::Normal(1.0 / (inp as f64).sqrt())
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.inp;
        let mut y = vec![0.0; n * self.out];
        if let Some(b) = self.b {
            let b = p.get(b);
            for row in y.chunks_exact_mut(self.out) {
                row.copy_from_slice(b);
            }
        }
        gemm(
            1.0,
            MatRef::new(x, n, self.inp),
            MatRef::new(p.get(self.w), self.inp, self.out),
            1.0,
            MatMut::new(&mut y, n, self.out),
        );
        y
    }

    /// Accumulates parameter gradients into `g` and, if given, the input
    /// gradient into `dx`.
    pub fn backward(&self, p: &ParamStore, x: &[f64], dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        let n = x.len() / self.inp;
        debug_assert_eq!(dy.len(), n * self.out);
        let wr = p.range(self.w);
        gemm(
            1.0,
            MatRef::new(x, n, self.inp).t(),
            MatRef::new(dy, n, self.out),
            1.0,
            MatMut::new(&mut g[wr], self.inp, self.out),
        );
        if let Some(b) = self.b {
            let gb = &mut g[p.range(b)];
            for row in dy.chunks_exact(self.out) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if let Some(dx) = dx {
            gemm(
                1.0,
                MatRef::new(dy, n, self.out),
                MatRef::new(p.get(self.w), self.inp, self.out).t(),
                1.0,
                MatMut::new(dx, n, self.inp),
            );
        }
    }

    /// Input gradient only, returned fresh.
    pub fn backward_dx(&self, p: &ParamStore, x: &[f64], dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        self.backward(p, x, dy, g, Some(&mut dx));
        dx
    }
}

/// `h = xn ⊙ (1 + scale) + shift`, row-broadcast.
pub(crate) fn modulate(xn: &[f64], shift: &[f64], scale: &[f64]) -> Vec<f64> {
    let d = shift.len();
    let mut h = vec![0.0; xn.len()];
    for (hr, xr) in h.chunks_exact_mut(d).zip(xn.chunks_exact(d)) {
        for j in 0..d {
            hr[j] = xr[j] * (1.0 + scale[j]) + shift[j];
        }
    }
    h
}

/// Backward of [`modulate`]: returns `d xn`, accumulates shift/scale grads.
pub(crate) fn modulate_backward(xn: &[f64], scale: &[f64], dh: &[f64], dshift: &mut [f64], dscale: &mut [f64]) -> Vec<f64> {
    let d = scale.len();
    let mut dxn = vec![0.0; xn.len()];
    for ((gr, xr), dr) in dxn.chunks_exact_mut(d).zip(xn.chunks_exact(d)).zip(dh.chunks_exact(d)) {
        for j in 0..d {
            gr[j] = dr[j] * (1.0 + scale[j]);
            dshift[j] += dr[j];
            dscale[j] += dr[j] * xr[j];
        }
    }
    dxn
}

/// Multi-head scaled dot-product attention; returns (output, probabilities
/// `heads × nq × nk`). Masked entries get probability exactly zero; a fully
/// masked query row yields a zero output.
pub(crate) fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    nq: usize,
    nk: usize,
    width: usize,
    heads: usize,
    mask: Option<&[bool]>,
) -> (Vec<f64>, Vec<f64>) {
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; nq * width];
    let mut probs = vec![0.0; heads * nq * nk];
    for h in 0..heads {
        let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
        gemm(
            scale,
            MatRef::cols_of(q, nq, width, h * dh, dh),
            MatRef::cols_of(k, nk, width, h * dh, dh).t(),
            0.0,
            MatMut::new(p, nq, nk),
        );
        for (i, row) in p.chunks_exact_mut(nk).enumerate() {
            if let Some(m) = mask {
                for (s, &ok) in row.iter_mut().zip(&m[i * nk..(i + 1) * nk]) {
                    if !ok {
                        *s = f64::NEG_INFINITY;
                    }
                }
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s - mx).exp();
                sum += *s;
            }
            for s in row.iter_mut() {
                *s /= sum;
            }
        }
        gemm(
            1.0,
            MatRef::new(p, nq, nk),
            MatRef::cols_of(v, nk, width, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut out, nq, width, h * dh, dh),
        );
    }
    (out, probs)
}

/// Backward of [`attention`]: returns (dq, dk, dv).
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    nq: usize,
    nk: usize,
    width: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; nq * width];
    let mut dk = vec![0.0; nk * width];
    let mut dv = vec![0.0; nk * width];
    let mut ds = vec![0.0; nq * nk];
    for h in 0..heads {
        let p = &probs[h * nq * nk..(h + 1) * nq * nk];
        // dV_h = Pᵀ dO_h
        gemm(
            1.0,
            MatRef::new(p, nq, nk).t(),
            MatRef::cols_of(dout, nq, width, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut dv, nk, width, h * dh, dh),
        );
        // dP = dO_h V_hᵀ
        gemm(
            1.0,
            MatRef::cols_of(dout, nq, width, h * dh, dh),
            MatRef::cols_of(v, nk, width, h * dh, dh).t(),
            0.0,
            MatMut::new(&mut ds, nq, nk),
        );
        for (dr, pr) in ds.chunks_exact_mut(nk).zip(p.chunks_exact(nk)) {
            let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
            for (g, &pp) in dr.iter_mut().zip(pr) {
                *g = pp * (*g - dot);
            }
        }
        gemm(
            scale,
            MatRef::new(&ds, nq, nk),
            MatRef::cols_of(k, nk, width, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut dq, nq, width, h * dh, dh),
        );
        gemm(
            scale,
            MatRef::new(&ds, nq, nk).t(),
            MatRef::cols_of(q, nq, width, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut dk, nk, width, h * dh, dh),
        );
    }
    (dq, dk, dv)
}

fn col_sum_product(a: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    for (ar, br) in a.chunks_exact(d).zip(b.chunks_exact(d)) {
        for j in 0..d {
            out[j] += ar[j] * br[j];
        }
    }
}

/// One modality's parameters inside a block.
#[derive(Clone, Debug)]
pub(crate) struct BranchLayers {
    pub modul: Linear,
    pub qkv: Linear,
    pub out: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl BranchLayers {
    pub fn register(p: &mut ParamStore, prefix: &str, d: usize, ffn: usize) -> Self {
        Self {
            modul: Linear::register(p, &format!("{prefix}.mod"), d, 6 * d, true, Init::Zero),
            qkv: Linear::register(p, &format!("{prefix}.qkv"), d, 3 * d, true, Linear::std(d)),
            out: Linear::register(p, &format!("{prefix}.out"), d, d, true, Linear::std(d)),
            ff1: Linear::register(p, &format!("{prefix}.ff1"), d, ffn, true, Linear::std(d)),
            ff2: Linear::register(p, &format!("{prefix}.ff2"), ffn, d, true, Linear::std(ffn)),
        }
    }
}

/// Audio cross-attention used by the cross-attention baseline. The output
/// projection has no bias, so a query that may see no audio gets exactly zero.
#[derive(Clone, Debug)]
pub(crate) struct CrossLayers {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl CrossLayers {
    pub fn register(p: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            q: Linear::register(p, &format!("{prefix}.q"), d, d, true, Linear::std(d)),
            k: Linear::register(p, &format!("{prefix}.k"), d, d, true, Linear::std(d)),
            v: Linear::register(p, &format!("{prefix}.v"), d, d, true, Linear::std(d)),
            o: Linear::register(p, &format!("{prefix}.o"), d, d, false, Init::Zero),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    /// (row range selector, layers) for each branch taking part in the joint
    /// attention; ranges are resolved per call.
    pub branches: Vec<(usize, BranchLayers)>,
    pub cross: Option<CrossLayers>,
}

/// Row ranges and attention context for one block call.
pub(crate) struct BlockCtx<'a> {
    pub d: usize,
    pub heads: usize,
    /// Row ranges indexed by branch selector: 0 video, 1 text, 2 audio.
    pub ranges: [Range<usize>; 3],
    /// Rows taking part in the joint attention (a prefix of the token matrix).
    pub joint: usize,
    pub rope: &'a RopeTable,
    pub joint_mask: Option<&'a [bool]>,
    pub cross: Option<CrossCtx<'a>>,
}

pub(crate) struct CrossCtx<'a> {
    pub rope_q: &'a RopeTable,
    pub rope_k: &'a RopeTable,
    pub mask: Option<&'a [bool]>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct BranchCache {
    modv: Vec<f64>,
    xn: Vec<f64>,
    rstd: Vec<f64>,
    h: Vec<f64>,
    o: Vec<f64>,
    x1: Vec<f64>,
    cross: Option<CrossCache>,
    x1c: Vec<f64>,
    xn2: Vec<f64>,
    rstd2: Vec<f64>,
    h2: Vec<f64>,
    f1: Vec<f64>,
    act: Vec<f64>,
    f2: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
struct CrossCache {
    xn: Vec<f64>,
    rstd: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ca: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct BlockCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    att: Vec<f64>,
    branches: Vec<BranchCache>,
}

fn rows(x: &[f64], r: &Range<usize>, d: usize) -> Vec<f64> {
    x[r.start * d..r.end * d].to_vec()
}

impl Block {
    pub fn forward(&self, p: &ParamStore, x: &[f64], s: &[f64], ctx: &BlockCtx<'_>) -> (Vec<f64>, BlockCache) {
        let d = ctx.d;
        let nj = ctx.joint;
        let mut out = x.to_vec();
        let mut q = vec![0.0; nj * d];
        let mut k = vec![0.0; nj * d];
        let mut v = vec![0.0; nj * d];
        let mut caches = Vec::with_capacity(self.branches.len());
        for (sel, br) in &self.branches {
            let r = &ctx.ranges[*sel];
            let modv = br.modul.forward(p, s);
            let (xn, rstd) = layer_norm(&rows(x, r, d), d);
            let h = modulate(&xn, &modv[0..d], &modv[d..2 * d]);
            let qkv = br.qkv.forward(p, &h);
            for (i, row) in qkv.chunks_exact(3 * d).enumerate() {
                let dst = (r.start + i) * d;
                q[dst..dst + d].copy_from_slice(&row[..d]);
                k[dst..dst + d].copy_from_slice(&row[d..2 * d]);
                v[dst..dst + d].copy_from_slice(&row[2 * d..]);
            }
            caches.push(BranchCache { modv, xn, rstd, h, ..Default::default() });
        }
        ctx.rope.apply(&mut q, d);
        ctx.rope.apply(&mut k, d);
        let (att, probs) = attention(&q, &k, &v, nj, nj, d, ctx.heads, ctx.joint_mask);

        let audio_x = rows(x, &ctx.ranges[2], d);
        for ((sel, br), c) in self.branches.iter().zip(caches.iter_mut()) {
            let r = &ctx.ranges[*sel];
            let modv = &c.modv;
            c.o = br.out.forward(p, &rows(&att, r, d));
            let mut x1 = rows(x, r, d);
            let g1 = &modv[2 * d..3 * d];
            for (xr, or) in x1.chunks_exact_mut(d).zip(c.o.chunks_exact(d)) {
                for j in 0..d {
                    xr[j] += (1.0 + g1[j]) * or[j];
                }
            }
            let mut x1c = x1.clone();
            if let (Some(cl), Some(cc), 0) = (&self.cross, &ctx.cross, *sel) {
                let na = ctx.ranges[2].len();
                let nv = r.len();
                let (xn, rstd) = layer_norm(&x1, d);
                let mut cq = cl.q.forward(p, &xn);
                cc.rope_q.apply(&mut cq, d);
                let mut ck = cl.k.forward(p, &audio_x);
                cc.rope_k.apply(&mut ck, d);
                let cv = cl.v.forward(p, &audio_x);
                let (ca, cprobs) = attention(&cq, &ck, &cv, nv, na, d, ctx.heads, cc.mask);
                let y = cl.o.forward(p, &ca);
                for (a, b) in x1c.iter_mut().zip(&y) {
                    *a += b;
                }
                c.cross = Some(CrossCache { xn, rstd, q: cq, k: ck, v: cv, probs: cprobs, ca });
            }
            let (xn2, rstd2) = layer_norm(&x1c, d);
            let h2 = modulate(&xn2, &modv[3 * d..4 * d], &modv[4 * d..5 * d]);
            let f1 = br.ff1.forward(p, &h2);
            let act: Vec<f64> = f1.iter().map(|&z| gelu(z)).collect();
            let f2 = br.ff2.forward(p, &act);
            let g2 = &modv[5 * d..6 * d];
            let dst = &mut out[r.start * d..r.end * d];
            for ((o, a), f) in dst.chunks_exact_mut(d).zip(x1c.chunks_exact(d)).zip(f2.chunks_exact(d)) {
                for j in 0..d {
                    o[j] = a[j] + (1.0 + g2[j]) * f[j];
                }
            }
            c.x1 = x1;
            c.x1c = x1c;
            c.xn2 = xn2;
            c.rstd2 = rstd2;
            c.h2 = h2;
            c.f1 = f1;
            c.act = act;
            c.f2 = f2;
        }
        let cache = BlockCache { x: x.to_vec(), q, k, v, probs, att, branches: caches };
        (out, cache)
    }

    /// Given the gradient of the block output, returns the gradient of its
    /// input and accumulates parameter grads into `g` and the conditioning
    /// gradient into `ds`.
    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &BlockCache,
        dout: &[f64],
        s: &[f64],
        ctx: &BlockCtx<'_>,
        g: &mut [f64],
        ds: &mut [f64],
    ) -> Vec<f64> {
        let d = ctx.d;
        let nj = ctx.joint;
        let mut dx = vec![0.0; dout.len()];
        // Rows outside every branch (fixed audio tokens in the cross variant)
        // pass straight through.
        let covered: Vec<usize> = self.branches.iter().map(|(s, _)| *s).collect();
        for sel in 0..3 {
            if !covered.contains(&sel) {
                let r = &ctx.ranges[sel];
                dx[r.start * d..r.end * d].copy_from_slice(&dout[r.start * d..r.end * d]);
            }
        }
        let audio_x = rows(&cache.x, &ctx.ranges[2], d);
        let mut d_audio = vec![0.0; audio_x.len()];
        let mut datt = vec![0.0; nj * d];
        let mut dmods: Vec<Vec<f64>> = Vec::with_capacity(self.branches.len());

        for ((sel, br), c) in self.branches.iter().zip(&cache.branches) {
            let r = &ctx.ranges[*sel];
            let modv = &c.modv;
            let mut dmod = vec![0.0; 6 * d];
            let dy = rows(dout, r, d);
            // x2 = x1c + (1+g2) ⊙ f2
            let mut dx1c = dy.clone();
            let g2 = &modv[5 * d..6 * d];
            let mut df2 = vec![0.0; dy.len()];
            for ((o, dr), fr) in df2.chunks_exact_mut(d).zip(dy.chunks_exact(d)).zip(c.f2.chunks_exact(d)) {
                for j in 0..d {
                    o[j] = dr[j] * (1.0 + g2[j]);
                }
                let _ = fr;
            }
            col_sum_product(&dy, &c.f2, d, &mut dmod[5 * d..6 * d]);
            let dact = br.ff2.backward_dx(p, &c.act, &df2, g);
            let df1: Vec<f64> = dact.iter().zip(&c.f1).map(|(a, &z)| a * gelu_grad(z)).collect();
            let dh2 = br.ff1.backward_dx(p, &c.h2, &df1, g);
            let (dsh2, rest) = dmod[3 * d..5 * d].split_at_mut(d);
            let dxn2 = modulate_backward(&c.xn2, &modv[4 * d..5 * d], &dh2, dsh2, rest);
            layer_norm_backward(&c.xn2, &c.rstd2, &dxn2, d, &mut dx1c);

            let mut dx1 = dx1c.clone();
            if let (Some(cl), Some(cc), Some(cx)) = (&self.cross, &ctx.cross, &c.cross) {
                let na = ctx.ranges[2].len();
                let nv = r.len();
                let dca = cl.o.backward_dx(p, &cx.ca, &dx1c, g);
                let (mut dcq, mut dck, dcv) = attention_backward(&cx.q, &cx.k, &cx.v, &cx.probs, &dca, nv, na, d, ctx.heads);
                cc.rope_q.apply_transpose(&mut dcq, d);
                cc.rope_k.apply_transpose(&mut dck, d);
                let dxn = cl.q.backward_dx(p, &cx.xn, &dcq, g);
                cl.k.backward(p, &audio_x, &dck, g, Some(&mut d_audio));
                cl.v.backward(p, &audio_x, &dcv, g, Some(&mut d_audio));
                layer_norm_backward(&cx.xn, &cx.rstd, &dxn, d, &mut dx1);
            }
            // x1 = x + (1+g1) ⊙ o
            let g1 = &modv[2 * d..3 * d];
            let mut d_o = vec![0.0; dx1.len()];
            for (o, dr) in d_o.chunks_exact_mut(d).zip(dx1.chunks_exact(d)) {
                for j in 0..d {
                    o[j] = dr[j] * (1.0 + g1[j]);
                }
            }
            col_sum_product(&dx1, &c.o, d, &mut dmod[2 * d..3 * d]);
            for (a, b) in dx[r.start * d..r.end * d].iter_mut().zip(&dx1) {
                *a += b;
            }
            let att_rows = rows(&cache.att, r, d);
            br.out.backward(p, &att_rows, &d_o, g, Some(&mut datt[r.start * d..r.end * d]));
            dmods.push(dmod);
        }

        let (mut dq, mut dk, dv) =
            attention_backward(&cache.q, &cache.k, &cache.v, &cache.probs, &datt, nj, nj, d, ctx.heads);
        ctx.rope.apply_transpose(&mut dq, d);
        ctx.rope.apply_transpose(&mut dk, d);

        for (((sel, br), c), mut dmod) in self.branches.iter().zip(&cache.branches).zip(dmods) {
            let r = &ctx.ranges[*sel];
            let n = r.len();
            let mut dqkv = vec![0.0; n * 3 * d];
            for i in 0..n {
                let src = (r.start + i) * d;
                let row = &mut dqkv[i * 3 * d..(i + 1) * 3 * d];
                row[..d].copy_from_slice(&dq[src..src + d]);
                row[d..2 * d].copy_from_slice(&dk[src..src + d]);
                row[2 * d..].copy_from_slice(&dv[src..src + d]);
            }
            let dh = br.qkv.backward_dx(p, &c.h, &dqkv, g);
            let (dsh1, rest) = dmod[0..2 * d].split_at_mut(d);
            let dxn = modulate_backward(&c.xn, &c.modv[d..2 * d], &dh, dsh1, rest);
            layer_norm_backward(&c.xn, &c.rstd, &dxn, d, &mut dx[r.start * d..r.end * d]);
            br.modul.backward(p, s, &dmod, g, Some(ds));
        }
        if self.cross.is_some() {
            let r = &ctx.ranges[2];
            for (a, b) in dx[r.start * d..r.end * d].iter_mut().zip(&d_audio) {
                *a += b;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_backward_matches_central_differences() {
        let (nq, nk, width, heads) = (3, 4, 4, 2);
        let gen = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|i| ((i as f64 + 1.0) * s).sin()).collect() };
        let q = gen(nq * width, 0.7);
        let k = gen(nk * width, 1.3);
        let v = gen(nk * width, 0.4);
        let w = gen(nq * width, 2.1);
        let mask: Vec<bool> = (0..nq * nk).map(|i| i % 5 != 1).collect();
        let loss = |q: &[f64], k: &[f64], v: &[f64]| -> f64 {
            let (o, _) = attention(q, k, v, nq, nk, width, heads, Some(&mask));
            o.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, probs) = attention(&q, &k, &v, nq, nk, width, heads, Some(&mask));
        let (dq, dk, dv) = attention_backward(&q, &k, &v, &probs, &w, nq, nk, width, heads);
        let h = 1e-6;
        let fd = |which: usize, i: usize| -> f64 {
            let mut a = [q.clone(), k.clone(), v.clone()];
            a[which][i] += h;
            let lp = loss(&a[0], &a[1], &a[2]);
            a[which][i] -= 2.0 * h;
            let lm = loss(&a[0], &a[1], &a[2]);
            (lp - lm) / (2.0 * h)
        };
        for i in 0..q.len() {
            assert!((fd(0, i) - dq[i]).abs() < 1e-7);
        }
        for i in 0..k.len() {
            assert!((fd(1, i) - dk[i]).abs() < 1e-7);
            assert!((fd(2, i) - dv[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn masked_keys_get_zero_probability() {
        let (nq, nk, width, heads) = (2, 3, 4, 1);
        let q = vec![0.3; nq * width];
        let k: Vec<f64> = (0..nk * width).map(|i| i as f64 * 0.1).collect();
        let v = k.clone();
        let mask = vec![true, false, true, false, false, false];
        let (o, p) = attention(&q, &k, &v, nq, nk, width, heads, Some(&mask));
        assert_eq!(p[1], 0.0);
        // second row fully masked: zero output
        assert!(p[3..6].iter().all(|&x| x == 0.0));
        assert!(o[width..].iter().all(|&x| x == 0.0));
    }
}

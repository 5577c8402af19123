//! Forward and reverse-mode passes of the two-stream ε-prediction network.
//!
//! The conditioner stream turns the noisy recording into one feature map per
//! block. The main stream runs the diffused signal through its own blocks and,
//! after each one, a bridge modulates it per channel (scale and shift from the
//! noise-scale embedding and pooled conditioner features) and adds a
//! convolution of the conditioner features.

use super::ops::{
    axpy, conv1d_backward, conv1d_forward, dot, linear_backward, linear_forward, silu,
    silu_backward, sum, Scalar,
};
use super::params::{BridgeSlot, ConvSlot, HnfSlot, ScoreNetParams};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;
const EMBED_POSITION_SCALE: f64 = 1000.0;

/// Sinusoidal embedding of the noise scale, treating `scale * 1000` as a position.
pub fn noise_scale_embedding<S: Scalar>(noise_scale: f64, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let pos = noise_scale * EMBED_POSITION_SCALE;
    let freq = |k: usize| (-(10000f64.ln()) * k as f64 / half as f64).exp();
    (0..half)
        .map(|k| S::of((pos * freq(k)).sin()))
        .chain((0..half).map(|k| S::of((pos * freq(k)).cos())))
        .collect()
}

fn conv<S: Scalar>(p: &[S], s: &ConvSlot, x: &[S], len: usize) -> Vec<S> {
    conv1d_forward(x, s.cin, len, s.w.of(p), s.b.of(p), s.cout, s.k)
}

fn conv_back<S: Scalar>(
    p: &[S],
    g: &mut [S],
    s: &ConvSlot,
    x: &[S],
    len: usize,
    dy: &[S],
    dx: Option<&mut [S]>,
) {
    // weight and bias slots are disjoint and ordered w then b
    let (gw, gb) = g[s.w.off..s.b.off + s.b.len].split_at_mut(s.w.len);
    conv1d_backward(x, s.cin, len, s.w.of(p), s.cout, s.k, dy, dx, gw, gb);
}

/// Intermediate values of one HNF block.
#[derive(Debug, Clone)]
pub(crate) struct HnfTrace<S> {
    input: Vec<S>,
    cat_pre: Vec<S>,
    cat_act: Vec<S>,
    /// First-half channels after normalization, before the affine gain.
    normed: Vec<S>,
    inv_std: Vec<S>,
    act_pre: Vec<S>,
    pub output: Vec<S>,
}

impl<S> HnfTrace<S> {
    #[cfg(test)]
    pub(crate) fn normalized_half(&self) -> &[S] {
        &self.normed
    }
}

pub(crate) fn hnf_forward<S: Scalar>(p: &[S], s: &HnfSlot, x: Vec<S>, len: usize) -> HnfTrace<S> {
    let c = s.channels;
    let half = c / 2;
    let mut cat_pre = Vec::with_capacity(s.convs.len() * c * len);
    for cs in &s.convs {
        cat_pre.extend(conv(p, cs, &x, len));
    }
    let cat_act = silu(&cat_pre);
    let mut act_pre = conv(p, &s.proj, &cat_act, len);

    let gamma = s.gamma.of(p);
    let beta = s.beta.of(p);
    let mut normed = vec![S::zero(); half * len];
    let mut inv_std = vec![S::zero(); half];
    let inv_len = S::of(1.0 / len as f64);
    for ch in 0..half {
        let z = &mut act_pre[ch * len..(ch + 1) * len];
        let mean = sum(z) * inv_len;
        let var = z.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_len;
        let is = S::one() / (var + S::of(NORM_EPS)).sqrt();
        inv_std[ch] = is;
        let nrm = &mut normed[ch * len..(ch + 1) * len];
        for (n, v) in nrm.iter_mut().zip(z.iter_mut()) {
            *n = (*v - mean) * is;
            *v = gamma[ch] * *n + beta[ch];
        }
    }
    let mut output = silu(&act_pre);
    for (o, &i) in output.iter_mut().zip(&x) {
        *o += i;
    }
    HnfTrace {
        input: x,
        cat_pre,
        cat_act,
        normed,
        inv_std,
        act_pre,
        output,
    }
}

/// Returns the gradient with respect to the block input.
fn hnf_backward<S: Scalar>(
    p: &[S],
    g: &mut [S],
    s: &HnfSlot,
    tr: &HnfTrace<S>,
    len: usize,
    dout: &[S],
) -> Vec<S> {
    let c = s.channels;
    let half = c / 2;
    let mut dz = silu_backward(&tr.act_pre, dout);
    let gamma = s.gamma.of(p);
    let inv_len = S::of(1.0 / len as f64);
    for ch in 0..half {
        let da = &mut dz[ch * len..(ch + 1) * len];
        let n = &tr.normed[ch * len..(ch + 1) * len];
        g[s.gamma.off + ch] += dot(da, n);
        g[s.beta.off + ch] += sum(da);
        let gm = gamma[ch];
        let mean_dn = sum(da) * gm * inv_len;
        let mean_dn_n = dot(da, n) * gm * inv_len;
        let is = tr.inv_std[ch];
        for (d, &nv) in da.iter_mut().zip(n) {
            *d = is * (gm * *d - mean_dn - nv * mean_dn_n);
        }
    }
    let mut dcat = vec![S::zero(); tr.cat_act.len()];
    conv_back(p, g, &s.proj, &tr.cat_act, len, &dz, Some(&mut dcat));
    let dcat = silu_backward(&tr.cat_pre, &dcat);
    let mut dx = dout.to_vec();
    for (k, cs) in s.convs.iter().enumerate() {
        let dy = &dcat[k * c * len..(k + 1) * c * len];
        conv_back(p, g, cs, &tr.input, len, dy, Some(&mut dx));
    }
    dx
}

#[derive(Debug, Clone)]
struct BridgeTrace<S> {
    main_in: Vec<S>,
    scale: Vec<S>,
    film_in: Vec<S>,
}

/// `out = scale ⊙ main + shift + inject(cond)` with per-channel scale/shift.
pub(crate) fn bridge_forward<S: Scalar>(
    p: &[S],
    s: &BridgeSlot,
    main: Vec<S>,
    cond: &[S],
    embed: &[S],
    len: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let c = s.inject.cout;
    let inv_len = S::of(1.0 / len as f64);
    let mut film_in = embed.to_vec();
    film_in.extend(cond.chunks_exact(len).map(|row| sum(row) * inv_len));
    let ss = linear_forward(&film_in, s.film.w.of(p), s.film.b.of(p), s.film.dout);
    let scale: Vec<S> = ss[..c].iter().map(|&v| S::one() + v).collect();
    let mut out = conv(p, &s.inject, cond, len);
    for ch in 0..c {
        let (sc, sh) = (scale[ch], ss[c + ch]);
        let row = &mut out[ch * len..(ch + 1) * len];
        for (o, &m) in row.iter_mut().zip(&main[ch * len..(ch + 1) * len]) {
            *o += sc * m + sh;
        }
    }
    (out, scale, film_in)
}

/// Returns the gradient with respect to the main input; accumulates into
/// `dcond` and `dembed`.
#[allow(clippy::too_many_arguments)]
fn bridge_backward<S: Scalar>(
    p: &[S],
    g: &mut [S],
    s: &BridgeSlot,
    tr: &BridgeTrace<S>,
    cond: &[S],
    len: usize,
    dout: &[S],
    dcond: &mut [S],
    dembed: &mut [S],
) -> Vec<S> {
    let c = s.inject.cout;
    let e = dembed.len();
    let mut dmain = vec![S::zero(); c * len];
    let mut dss = vec![S::zero(); 2 * c];
    for ch in 0..c {
        let d = &dout[ch * len..(ch + 1) * len];
        axpy(&mut dmain[ch * len..(ch + 1) * len], tr.scale[ch], d);
        dss[ch] = dot(d, &tr.main_in[ch * len..(ch + 1) * len]);
        dss[c + ch] = sum(d);
    }
    let mut dfilm_in = vec![S::zero(); tr.film_in.len()];
    {
        let (gw, gb) = g[s.film.w.off..s.film.b.off + s.film.b.len].split_at_mut(s.film.w.len);
        linear_backward(&tr.film_in, s.film.w.of(p), &dss, Some(&mut dfilm_in), gw, gb);
    }
    for (de, &v) in dembed.iter_mut().zip(&dfilm_in[..e]) {
        *de += v;
    }
    let inv_len = S::of(1.0 / len as f64);
    for ch in 0..c {
        let dpool = dfilm_in[e + ch] * inv_len;
        dcond[ch * len..(ch + 1) * len]
            .iter_mut()
            .for_each(|v| *v += dpool);
    }
    conv_back(p, g, &s.inject, cond, len, dout, Some(dcond));
    dmain
}

/// Conditioner-stream features for one noisy input, reusable across steps.
#[derive(Debug, Clone)]
pub struct CondFeatures<S> {
    traces: Vec<HnfTrace<S>>,
    input: Vec<S>,
}

impl<S> CondFeatures<S> {
    fn block_output(&self, i: usize) -> &[S] {
        &self.traces[i].output
    }
}

#[derive(Debug, Clone)]
struct MainTrace<S> {
    x_t: Vec<S>,
    sin_embed: Vec<S>,
    emb_pre: Vec<S>,
    emb_act: Vec<S>,
    embed: Vec<S>,
    main: Vec<(HnfTrace<S>, BridgeTrace<S>)>,
    final_h: Vec<S>,
}

/// Everything needed to back-propagate one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    cond: CondFeatures<S>,
    main: MainTrace<S>,
}

impl<S: Scalar> ScoreNetParams<S> {
    fn check_len(&self, what: &str, n: usize) -> Result<()> {
        let want = self.arch.config.segment_len;
        if n != want {
            return Err(Error::Contract(format!(
                "{what} has {n} samples, model expects {want}"
            )));
        }
        Ok(())
    }

    /// Runs the conditioner stream on the noisy input.
    pub fn condition(&self, x_tilde: &[S]) -> Result<CondFeatures<S>> {
        self.check_len("noisy input", x_tilde.len())?;
        let p = &self.values;
        let len = x_tilde.len();
        let mut h = conv(p, &self.arch.cond_in, x_tilde, len);
        let mut traces = Vec::with_capacity(self.arch.cond_blocks.len());
        for blk in &self.arch.cond_blocks {
            let tr = hnf_forward(p, blk, h, len);
            h = tr.output.clone();
            traces.push(tr);
        }
        Ok(CondFeatures {
            traces,
            input: x_tilde.to_vec(),
        })
    }

    fn run_main(&self, x_t: &[S], cond: &CondFeatures<S>, noise_scale: f64) -> Result<(Vec<S>, MainTrace<S>)> {
        self.check_len("diffused input", x_t.len())?;
        if !(noise_scale > 0.0 && noise_scale <= 1.0) {
            return Err(Error::Contract(format!("noise scale {noise_scale} outside (0, 1]")));
        }
        let p = &self.values;
        let a = &self.arch;
        let len = x_t.len();
        let sin_embed = noise_scale_embedding::<S>(noise_scale, a.config.embed_dim);
        let emb_pre = linear_forward(&sin_embed, a.emb1.w.of(p), a.emb1.b.of(p), a.emb1.dout);
        let emb_act = silu(&emb_pre);
        let embed = linear_forward(&emb_act, a.emb2.w.of(p), a.emb2.b.of(p), a.emb2.dout);

        let mut h = conv(p, &a.main_in, x_t, len);
        let mut main = Vec::with_capacity(a.main_blocks.len());
        for (i, (blk, br)) in a.main_blocks.iter().zip(&a.bridges).enumerate() {
            let tr = hnf_forward(p, blk, h, len);
            let main_in = tr.output.clone();
            let (out, scale, film_in) =
                bridge_forward(p, br, tr.output.clone(), cond.block_output(i), &embed, len);
            main.push((
                tr,
                BridgeTrace {
                    main_in,
                    scale,
                    film_in,
                },
            ));
            h = out;
        }
        let eps = conv(p, &a.out, &h, len);
        if let Some(i) = eps.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network output at sample {i}")));
        }
        Ok((
            eps,
            MainTrace {
                x_t: x_t.to_vec(),
                sin_embed,
                emb_pre,
                emb_act,
                embed,
                main,
                final_h: h,
            },
        ))
    }

    /// ε prediction for a diffused segment given precomputed conditioner features.
    pub fn predict(&self, x_t: &[S], cond: &CondFeatures<S>, noise_scale: f64) -> Result<Vec<S>> {
        self.run_main(x_t, cond, noise_scale).map(|(y, _)| y)
    }

    /// ε̂ = net(x_t, x̃, √ᾱ).
    pub fn forward(&self, x_t: &[S], x_tilde: &[S], noise_scale: f64) -> Result<Vec<S>> {
        let cond = self.condition(x_tilde)?;
        self.run_main(x_t, &cond, noise_scale).map(|(y, _)| y)
    }

    /// Forward pass that keeps what [`ScoreNetParams::backward`] needs.
    pub fn forward_trace(&self, x_t: &[S], x_tilde: &[S], noise_scale: f64) -> Result<(Vec<S>, Trace<S>)> {
        let cond = self.condition(x_tilde)?;
        let (y, main) = self.run_main(x_t, &cond, noise_scale)?;
        Ok((y, Trace { cond, main }))
    }

    /// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(output)`.
    pub fn backward(&self, trace: &Trace<S>, d_eps: &[S], grads: &mut [S]) {
        let (cond, tr) = (&trace.cond, &trace.main);
        let p = &self.values;
        let a = &self.arch;
        let len = tr.x_t.len();
        let c = a.config.base_channels;
        let g = grads;

        let mut dh = vec![S::zero(); c * len];
        conv_back(p, g, &a.out, &tr.final_h, len, d_eps, Some(&mut dh));

        let mut dembed = vec![S::zero(); a.config.embed_dim];
        let mut dcond: Vec<Vec<S>> = (0..a.main_blocks.len()).map(|_| vec![S::zero(); c * len]).collect();
        for i in (0..a.main_blocks.len()).rev() {
            let (htr, btr) = &tr.main[i];
            let dmain = bridge_backward(
                p,
                g,
                &a.bridges[i],
                btr,
                cond.block_output(i),
                len,
                &dh,
                &mut dcond[i],
                &mut dembed,
            );
            dh = hnf_backward(p, g, &a.main_blocks[i], htr, len, &dmain);
        }
        conv_back(p, g, &a.main_in, &tr.x_t, len, &dh, None);

        // conditioner stream: c_i feeds bridge i and block i+1
        let mut dc = vec![S::zero(); c * len];
        for i in (0..a.cond_blocks.len()).rev() {
            for (d, &v) in dc.iter_mut().zip(&dcond[i]) {
                *d += v;
            }
            dc = hnf_backward(p, g, &a.cond_blocks[i], &cond.traces[i], len, &dc);
        }
        conv_back(p, g, &a.cond_in, &cond.input, len, &dc, None);

        let mut demb_act = vec![S::zero(); tr.emb_act.len()];
        {
            let s = &a.emb2;
            let (gw, gb) = g[s.w.off..s.b.off + s.b.len].split_at_mut(s.w.len);
            linear_backward(&tr.emb_act, s.w.of(p), &dembed, Some(&mut demb_act), gw, gb);
        }
        let demb_pre = silu_backward(&tr.emb_pre, &demb_act);
        let s = &a.emb1;
        let (gw, gb) = g[s.w.off..s.b.off + s.b.len].split_at_mut(s.w.len);
        linear_backward(&tr.sin_embed, s.w.of(p), &demb_pre, None, gw, gb);
        debug_assert!(tr.embed.len() == a.config.embed_dim);
    }
}

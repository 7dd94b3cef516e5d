//! Forward and backward passes of the captioning decoder.
//!
//! Each decoder block runs, with pre-normalization and residual adds:
//! causal self-attention, multi-head cross-attention over the encoder
//! states, then a GELU feed-forward block. The token embedding matrix is
//! reused as the output head.

use ndarray::{s, Array2, Axis};

use super::ops::{
    causal_softmax_rows, gelu, gelu_grad, layer_norm, layer_norm_backward, log_softmax_at, softmax_backward,
    softmax_rows, LnCache,
};
use super::params::{Backbone, CrossAttention, DecoderLayer, ModelParams, Theta};
use crate::error::{Error, Result};

/// Encoder output: `n_patches x d_encoder`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates(pub Array2<f64>);

impl EncoderStates {
    /// All-zero states, as produced by a blank image.
    pub fn blank(params: &ModelParams) -> Self {
        Self(Array2::zeros((params.config.n_patches, params.config.d_encoder)))
    }

    pub fn n_patches(&self) -> usize {
        self.0.nrows()
    }

    /// Reorders patches: row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(self.0.select(Axis(0), perm))
    }
}

/// Cross-attention output together with the per-head attention weights.
#[derive(Debug, Clone)]
pub struct CrossAttentionOutput {
    pub output: Array2<f64>,
    /// Per head, `T x n_patches`; rows sum to one.
    pub weights: Vec<Array2<f64>>,
    q: Vec<Array2<f64>>,
    k: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    heads: Array2<f64>,
}

/// Multi-head cross-attention, `Concat(head_1..head_h) W_O` with
/// `head_i = softmax(Q W_i^Q (K W_i^K)^T / sqrt(d)) V W_i^V`. The residual
/// add is left to the caller.
pub fn cross_attention(queries: &Array2<f64>, enc: &EncoderStates, w: &CrossAttention) -> Result<CrossAttentionOutput> {
    let n_heads = w.wq.len();
    if n_heads == 0 || w.wk.len() != n_heads || w.wv.len() != n_heads {
        return Err(Error::ShapeMismatch("cross-attention head count".into()));
    }
    let d = w.wq[0].ncols();
    if queries.ncols() != w.wq[0].nrows()
        || enc.0.ncols() != w.wk[0].nrows()
        || w.wo.nrows() != n_heads * d
        || w.wo.ncols() != queries.ncols()
    {
        return Err(Error::ShapeMismatch(format!(
            "queries {:?}, encoder {:?}, W_Q {:?}, W_K {:?}, W_O {:?}",
            queries.shape(),
            enc.0.shape(),
            w.wq[0].shape(),
            w.wk[0].shape(),
            w.wo.shape()
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let t = queries.nrows();
    let mut heads = Array2::zeros((t, n_heads * d));
    let mut out = CrossAttentionOutput {
        output: Array2::zeros((0, 0)),
        weights: Vec::with_capacity(n_heads),
        q: Vec::with_capacity(n_heads),
        k: Vec::with_capacity(n_heads),
        v: Vec::with_capacity(n_heads),
        heads: Array2::zeros((0, 0)),
    };
    for i in 0..n_heads {
        let q = queries.dot(&w.wq[i]);
        let k = enc.0.dot(&w.wk[i]);
        let v = enc.0.dot(&w.wv[i]);
        let mut a = q.dot(&k.t()) * scale;
        softmax_rows(&mut a);
        heads.slice_mut(s![.., i * d..(i + 1) * d]).assign(&a.dot(&v));
        out.q.push(q);
        out.k.push(k);
        out.v.push(v);
        out.weights.push(a);
    }
    out.output = heads.dot(&w.wo);
    out.heads = heads;
    Ok(out)
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    qkv: Array2<f64>,
    self_attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln_cross: LnCache,
    c: Array2<f64>,
    cross: CrossAttentionOutput,
    ln2: LnCache,
    f: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    inputs: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Array2<f64>,
    pub logits: Array2<f64>,
}

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Cross-attention weights only.
    CrossAttention,
    /// Cross-attention and every decoder weight (the encoder stub stays untouched).
    Full,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub theta: Theta,
    pub backbone: Option<Backbone>,
}

impl ModelParams {
    /// Encoder stub: patch `p` is the image embedding times a fixed random
    /// projection. Linear and bias free.
    pub fn encode_image(&self, embedding: &[f64]) -> Result<EncoderStates> {
        let cfg = &self.config;
        if embedding.len() != cfg.image_dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.image_dim,
                found: embedding.len(),
            });
        }
        let row = ndarray::ArrayView1::from(embedding);
        let flat = row.dot(&self.backbone.patch_proj);
        Ok(EncoderStates(
            flat.into_shape_with_order((cfg.n_patches, cfg.d_encoder))
                .expect("patch projection width is n_patches * d_encoder"),
        ))
    }

    fn check_inputs(&self, inputs: &[u32], enc: &EncoderStates) -> Result<()> {
        let cfg = &self.config;
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if inputs.len() > cfg.max_context {
            return Err(Error::ContextOverflow {
                len: inputs.len(),
                max: cfg.max_context,
            });
        }
        if let Some(&bad) = inputs.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        if enc.0.ncols() != cfg.d_encoder || enc.0.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!("encoder states {:?}", enc.0.shape())));
        }
        Ok(())
    }

    /// Logits `T x vocab` for every input position.
    pub fn decoder_forward(&self, inputs: &[u32], enc: &EncoderStates) -> Result<Array2<f64>> {
        Ok(self.forward_cached(inputs, enc)?.logits)
    }

    pub fn forward_cached(&self, inputs: &[u32], enc: &EncoderStates) -> Result<ForwardCache> {
        self.check_inputs(inputs, enc)?;
        let bb = &self.backbone;
        let t = inputs.len();
        let mut x = bb.wte.select(Axis(0), &inputs.iter().map(|&i| i as usize).collect::<Vec<_>>());
        x += &bb.wpe.slice(s![..t, ..]);
        let mut layers = Vec::with_capacity(self.config.n_layers);
        for (layer, cross_w) in bb.layers.iter().zip(&self.theta.layers) {
            let (next, cache) = self.layer_forward(x, layer, cross_w, enc)?;
            x = next;
            layers.push(cache);
        }
        let (z, lnf) = layer_norm(&x, &bb.lnf_g, &bb.lnf_b);
        let logits = z.dot(&bb.wte.t());
        Ok(ForwardCache {
            inputs: inputs.to_vec(),
            layers,
            lnf,
            z,
            logits,
        })
    }

    fn layer_forward(
        &self,
        mut x: Array2<f64>,
        layer: &DecoderLayer,
        cross_w: &CrossAttention,
        enc: &EncoderStates,
    ) -> Result<(Array2<f64>, LayerCache)> {
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let t = x.nrows();

        let (a, ln1) = layer_norm(&x, &layer.ln1_g, &layer.ln1_b);
        let qkv = a.dot(&layer.w_qkv) + &layer.b_qkv;
        let mut o = Array2::zeros((t, d));
        let mut self_attn = Vec::with_capacity(heads);
        for j in 0..heads {
            let q = qkv.slice(s![.., j * dh..(j + 1) * dh]);
            let k = qkv.slice(s![.., d + j * dh..d + (j + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + j * dh..2 * d + (j + 1) * dh]);
            let mut att = q.dot(&k.t()) * scale;
            causal_softmax_rows(&mut att);
            o.slice_mut(s![.., j * dh..(j + 1) * dh]).assign(&att.dot(&v));
            self_attn.push(att);
        }
        x += &(o.dot(&layer.w_attn) + &layer.b_attn);

        let (c, ln_cross) = layer_norm(&x, &layer.ln_cross_g, &layer.ln_cross_b);
        let cross = cross_attention(&c, enc, cross_w)?;
        x += &cross.output;

        let (f, ln2) = layer_norm(&x, &layer.ln2_g, &layer.ln2_b);
        let u = f.dot(&layer.w_fc) + &layer.b_fc;
        let g = u.mapv(gelu);
        x += &(g.dot(&layer.w_proj) + &layer.b_proj);

        Ok((
            x,
            LayerCache {
                ln1,
                a,
                qkv,
                self_attn,
                o,
                ln_cross,
                c,
                cross,
                ln2,
                f,
                u,
                g,
            },
        ))
    }

    /// Backpropagates `dlogits` (`T x vocab`) through a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>, enc: &EncoderStates, mode: GradMode) -> Result<Gradients> {
        if dlogits.dim() != cache.logits.dim() {
            return Err(Error::ShapeMismatch(format!(
                "dlogits {:?} vs logits {:?}",
                dlogits.shape(),
                cache.logits.shape()
            )));
        }
        let bb = &self.backbone;
        let mut theta = self.theta.zeros_like();
        let mut full = (mode == GradMode::Full).then(|| bb.zeros_like());

        let dz = dlogits.dot(&bb.wte);
        if let Some(gb) = full.as_mut() {
            gb.wte += &dlogits.t().dot(&cache.z);
        }
        let mut dx = layer_norm_backward(
            &dz,
            &cache.lnf,
            &bb.lnf_g,
            full.as_mut().map(|gb| (&mut gb.lnf_g, &mut gb.lnf_b)),
        );
        for l in (0..self.config.n_layers).rev() {
            let gl = full.as_mut().map(|gb| &mut gb.layers[l]);
            dx = self.layer_backward(dx, l, &cache.layers[l], enc, &mut theta.layers[l], gl);
        }
        if let Some(gb) = full.as_mut() {
            for (t, &tok) in cache.inputs.iter().enumerate() {
                let row = dx.row(t);
                let mut e = gb.wte.row_mut(tok as usize);
                e += &row;
                let mut p = gb.wpe.row_mut(t);
                p += &row;
            }
        }
        Ok(Gradients { theta, backbone: full })
    }

    fn layer_backward(
        &self,
        dx_out: Array2<f64>,
        l: usize,
        cache: &LayerCache,
        enc: &EncoderStates,
        gcross: &mut CrossAttention,
        mut gl: Option<&mut DecoderLayer>,
    ) -> Array2<f64> {
        let layer = &self.backbone.layers[l];
        let cross_w = &self.theta.layers[l];
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // feed-forward
        let mut dx = dx_out;
        let dff = &dx;
        let dg = dff.dot(&layer.w_proj.t());
        let du = dg * &cache.u.mapv(gelu_grad);
        if let Some(g) = gl.as_deref_mut() {
            g.w_proj += &cache.g.t().dot(dff);
            g.b_proj += &dff.sum_axis(Axis(0));
            g.w_fc += &cache.f.t().dot(&du);
            g.b_fc += &du.sum_axis(Axis(0));
        }
        let df = du.dot(&layer.w_fc.t());
        let ln2_grads = gl.as_deref_mut().map(|g| (&mut g.ln2_g, &mut g.ln2_b));
        dx += &layer_norm_backward(&df, &cache.ln2, &layer.ln2_g, ln2_grads);

        // cross-attention
        let dc = cross_attention_backward(&dx, &cache.c, enc, cross_w, &cache.cross, gcross);
        let lnc_grads = gl.as_deref_mut().map(|g| (&mut g.ln_cross_g, &mut g.ln_cross_b));
        dx += &layer_norm_backward(&dc, &cache.ln_cross, &layer.ln_cross_g, lnc_grads);

        // self-attention
        let dsa = &dx;
        let do_ = dsa.dot(&layer.w_attn.t());
        if let Some(g) = gl.as_deref_mut() {
            g.w_attn += &cache.o.t().dot(dsa);
            g.b_attn += &dsa.sum_axis(Axis(0));
        }
        let mut dqkv = Array2::zeros(cache.qkv.raw_dim());
        for j in 0..heads {
            let cols = j * dh..(j + 1) * dh;
            let q = cache.qkv.slice(s![.., cols.clone()]);
            let k = cache.qkv.slice(s![.., d + j * dh..d + (j + 1) * dh]);
            let v = cache.qkv.slice(s![.., 2 * d + j * dh..2 * d + (j + 1) * dh]);
            let att = &cache.self_attn[j];
            let doj = do_.slice(s![.., cols.clone()]);
            let datt = doj.dot(&v.t());
            let dv = att.t().dot(&doj);
            let ds = softmax_backward(att, &datt) * scale;
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![.., cols]).assign(&dq);
            dqkv.slice_mut(s![.., d + j * dh..d + (j + 1) * dh]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + j * dh..2 * d + (j + 1) * dh]).assign(&dv);
        }
        if let Some(g) = gl.as_deref_mut() {
            g.w_qkv += &cache.a.t().dot(&dqkv);
            g.b_qkv += &dqkv.sum_axis(Axis(0));
        }
        let da = dqkv.dot(&layer.w_qkv.t());
        let ln1_grads = gl.map(|g| (&mut g.ln1_g, &mut g.ln1_b));
        dx += &layer_norm_backward(&da, &cache.ln1, &layer.ln1_g, ln1_grads);
        dx
    }
}

/// Accumulates cross-attention weight gradients into `grads`; returns the
/// gradient with respect to the queries' input.
fn cross_attention_backward(
    dout: &Array2<f64>,
    c: &Array2<f64>,
    enc: &EncoderStates,
    w: &CrossAttention,
    fwd: &CrossAttentionOutput,
    grads: &mut CrossAttention,
) -> Array2<f64> {
    let d = w.wq[0].ncols();
    let scale = 1.0 / (d as f64).sqrt();
    grads.wo += &fwd.heads.t().dot(dout);
    let dheads = dout.dot(&w.wo.t());
    let mut dc = Array2::zeros(c.raw_dim());
    for i in 0..w.wq.len() {
        let dh = dheads.slice(s![.., i * d..(i + 1) * d]);
        let a = &fwd.weights[i];
        let da = dh.dot(&fwd.v[i].t());
        let dv = a.t().dot(&dh);
        let ds = softmax_backward(a, &da) * scale;
        let dq = ds.dot(&fwd.k[i]);
        let dk = ds.t().dot(&fwd.q[i]);
        grads.wq[i] += &c.t().dot(&dq);
        grads.wk[i] += &enc.0.t().dot(&dk);
        grads.wv[i] += &enc.0.t().dot(&dv);
        dc += &dq.dot(&w.wq[i].t());
    }
    dc
}

/// Sum of `-ln p(target_t)` over positions where `mask` is true.
pub fn caption_loss(logits: &Array2<f64>, targets: &[u32], mask: &[bool]) -> Result<f64> {
    check_loss_inputs(logits, targets, mask)?;
    Ok(targets
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, m))| **m)
        .map(|(t, (&y, _))| -log_softmax_at(logits.row(t), y as usize))
        .sum())
}

/// Loss and its gradient with respect to the logits.
pub fn caption_loss_grad(logits: &Array2<f64>, targets: &[u32], mask: &[bool]) -> Result<(f64, Array2<f64>)> {
    check_loss_inputs(logits, targets, mask)?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (t, (&y, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let row = logits.row(t);
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss -= row[y as usize] - lse;
        let mut g = grad.row_mut(t);
        for (gv, &lv) in g.iter_mut().zip(row.iter()) {
            *gv = (lv - lse).exp();
        }
        g[y as usize] -= 1.0;
    }
    Ok((loss, grad))
}

fn check_loss_inputs(logits: &Array2<f64>, targets: &[u32], mask: &[bool]) -> Result<()> {
    if logits.nrows() != targets.len() || mask.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows, {} targets, {} mask entries",
            logits.nrows(),
            targets.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::EmptyMask);
    }
    if let Some(&bad) = targets.iter().find(|&&y| y as usize >= logits.ncols()) {
        return Err(Error::UnknownToken(bad));
    }
    Ok(())
}

impl ModelParams {
    /// Masked caption loss for one example.
    pub fn loss(&self, enc: &EncoderStates, inputs: &[u32], targets: &[u32], mask: &[bool]) -> Result<f64> {
        let logits = self.decoder_forward(inputs, enc)?;
        caption_loss(&logits, targets, mask)
    }

    /// Masked caption loss and its gradient for one example.
    pub fn loss_and_grad(
        &self,
        enc: &EncoderStates,
        inputs: &[u32],
        targets: &[u32],
        mask: &[bool],
        mode: GradMode,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(inputs, enc)?;
        let (loss, dlogits) = caption_loss_grad(&cache.logits, targets, mask)?;
        let grads = self.backward(&cache, &dlogits, enc, mode)?;
        Ok((loss, grads))
    }
}

//! Pre-norm decoder-only transformer with manual backpropagation.
//!
//! The forward pass is row-incremental: a sequence of `n` tokens is processed
//! by pushing rows one at a time into a [`NetCache`], each row attending to
//! the cached keys and values of earlier rows. Scoring and sampling therefore
//! share a single code path.

use super::layout::NetLayout;
use super::ops::{
    attend_row, dot, gelu, gelu_grad, layer_norm_row, layer_norm_row_backward, linear_row,
    linear_row_backward,
};
use super::{ModelConfig, PolicyError};
use crate::dsl::Token;

/// A view of one network inside a flat parameter vector.
pub(crate) struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub lay: &'a NetLayout,
    pub p: &'a [f64],
}

pub(crate) struct LayerCache {
    ln1_out: Vec<f64>,
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    att_out: Vec<f64>,
    ln2_out: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fc_pre: Vec<f64>,
    fc_act: Vec<f64>,
}

/// Activations of every row pushed so far.
pub(crate) struct NetCache {
    pub n: usize,
    cap: usize,
    tokens: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    h: Vec<f64>,
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
}

impl NetCache {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (cap, d, f, nh) = (cfg.max_len, cfg.d_model, cfg.d_ff, cfg.n_heads);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerCache {
                ln1_out: vec![0.0; cap * d],
                ln1_xhat: vec![0.0; cap * d],
                ln1_rstd: vec![0.0; cap],
                qkv: vec![0.0; cap * 3 * d],
                probs: vec![0.0; nh * cap * cap],
                att_out: vec![0.0; cap * d],
                ln2_out: vec![0.0; cap * d],
                ln2_xhat: vec![0.0; cap * d],
                ln2_rstd: vec![0.0; cap],
                fc_pre: vec![0.0; cap * f],
                fc_act: vec![0.0; cap * f],
            })
            .collect();
        NetCache {
            n: 0,
            cap,
            tokens: Vec::with_capacity(cap),
            layers,
            lnf_xhat: vec![0.0; cap * d],
            lnf_rstd: vec![0.0; cap],
            h: vec![0.0; cap * d],
            logits: Vec::with_capacity(cap * cfg.vocab_size),
            values: Vec::with_capacity(cap),
        }
    }

    pub fn last_logits(&self, vocab: usize) -> &[f64] {
        &self.logits[(self.n - 1) * vocab..self.n * vocab]
    }
}

fn pair_mut<'g>(g: &'g mut [f64], first: &std::ops::Range<usize>, second: &std::ops::Range<usize>) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert_eq!(first.end, second.start);
    let (a, b) = g[first.start..second.end].split_at_mut(first.len());
    (a, b)
}

impl Net<'_> {
    fn t(&self, r: &std::ops::Range<usize>) -> &[f64] {
        &self.p[r.clone()]
    }

    /// Append one token to `cache`, computing its logits and value.
    pub fn push(&self, cache: &mut NetCache, token: Token) -> Result<(), PolicyError> {
        let cfg = self.cfg;
        let (d, f, nh) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
        let hd = d / nh;
        let i = cache.n;
        if i >= cache.cap {
            return Err(PolicyError::SequenceTooLong { len: i + 1, max: cache.cap });
        }
        let tok = token.index();
        if tok >= cfg.vocab_size {
            return Err(PolicyError::UnknownToken(token.0));
        }
        let cap = cache.cap;
        let emb = &self.t(&self.lay.tok_emb)[tok * d..(tok + 1) * d];
        let pos = &self.t(&self.lay.pos_emb)[i * d..(i + 1) * d];
        let mut x: Vec<f64> = emb.iter().zip(pos).map(|(a, b)| a + b).collect();
        let mut tmp = vec![0.0; d];

        for (blk, lc) in self.lay.blocks.iter().zip(cache.layers.iter_mut()) {
            let row = i * d..(i + 1) * d;
            lc.ln1_rstd[i] = layer_norm_row(
                &x,
                self.t(&blk.ln1_g),
                self.t(&blk.ln1_b),
                &mut lc.ln1_out[row.clone()],
                &mut lc.ln1_xhat[row.clone()],
            );
            linear_row(
                &lc.ln1_out[row.clone()],
                self.t(&blk.w_qkv),
                self.t(&blk.b_qkv),
                &mut lc.qkv[i * 3 * d..(i + 1) * 3 * d],
            );
            for h in 0..nh {
                let pr = (h * cap + i) * cap;
                attend_row(
                    &lc.qkv,
                    d,
                    hd,
                    h,
                    i,
                    &mut lc.probs[pr..pr + i + 1],
                    &mut lc.att_out[i * d + h * hd..i * d + (h + 1) * hd],
                );
            }
            linear_row(&lc.att_out[row.clone()], self.t(&blk.w_o), self.t(&blk.b_o), &mut tmp);
            x.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);

            lc.ln2_rstd[i] = layer_norm_row(
                &x,
                self.t(&blk.ln2_g),
                self.t(&blk.ln2_b),
                &mut lc.ln2_out[row.clone()],
                &mut lc.ln2_xhat[row.clone()],
            );
            let frow = i * f..(i + 1) * f;
            linear_row(
                &lc.ln2_out[row],
                self.t(&blk.w_fc),
                self.t(&blk.b_fc),
                &mut lc.fc_pre[frow.clone()],
            );
            for (a, &z) in lc.fc_act[frow.clone()].iter_mut().zip(&lc.fc_pre[frow.clone()]) {
                *a = gelu(z);
            }
            linear_row(&lc.fc_act[frow], self.t(&blk.w_proj), self.t(&blk.b_proj), &mut tmp);
            x.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        }

        let row = i * d..(i + 1) * d;
        cache.lnf_rstd[i] = layer_norm_row(
            &x,
            self.t(&self.lay.lnf_g),
            self.t(&self.lay.lnf_b),
            &mut cache.h[row.clone()],
            &mut cache.lnf_xhat[row.clone()],
        );
        let v = cfg.vocab_size;
        cache.logits.resize((i + 1) * v, 0.0);
        linear_row(
            &cache.h[row.clone()],
            self.t(&self.lay.w_lm),
            self.t(&self.lay.b_lm),
            &mut cache.logits[i * v..(i + 1) * v],
        );
        let value = dot(&cache.h[row], self.t(&self.lay.w_v)) + self.p[self.lay.b_v.start];
        cache.values.push(value);
        cache.tokens.push(tok);
        cache.n += 1;
        Ok(())
    }

    pub fn run(&self, tokens: &[Token]) -> Result<NetCache, PolicyError> {
        if tokens.len() > self.cfg.max_len {
            return Err(PolicyError::SequenceTooLong { len: tokens.len(), max: self.cfg.max_len });
        }
        let mut cache = NetCache::new(self.cfg);
        for &t in tokens {
            self.push(&mut cache, t)?;
        }
        Ok(cache)
    }

    /// Accumulate `dL/dparams` into `grad` (this network's slice) given
    /// `dL/dlogits` (`n x vocab`, may be empty) and `dL/dvalues` (`n`, may be empty).
    pub fn backward(&self, cache: &NetCache, dlogits: &[f64], dvalues: &[f64], grad: &mut [f64]) {
        let cfg = self.cfg;
        let (n, d, f, nh, v) = (cache.n, cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.vocab_size);
        let hd = d / nh;
        let cap = cache.cap;
        let lay = self.lay;
        let mut dx = vec![0.0; n * d];
        let mut dh = vec![0.0; d];

        for i in 0..n {
            let row = i * d..(i + 1) * d;
            dh.fill(0.0);
            let mut touched = false;
            if !dlogits.is_empty() {
                let dl = &dlogits[i * v..(i + 1) * v];
                if dl.iter().any(|&g| g != 0.0) {
                    let (dw, db) = pair_mut(grad, &lay.w_lm, &lay.b_lm);
                    linear_row_backward(&cache.h[row.clone()], dl, self.t(&lay.w_lm), &mut dh, dw, db);
                    touched = true;
                }
            }
            if !dvalues.is_empty() && dvalues[i] != 0.0 {
                let dv = dvalues[i];
                let w_v = self.t(&lay.w_v);
                for k in 0..d {
                    dh[k] += dv * w_v[k];
                    grad[lay.w_v.start + k] += dv * cache.h[i * d + k];
                }
                grad[lay.b_v.start] += dv;
                touched = true;
            }
            if touched {
                let (dg, db) = pair_mut(grad, &lay.lnf_g, &lay.lnf_b);
                layer_norm_row_backward(
                    &dh,
                    &cache.lnf_xhat[row.clone()],
                    cache.lnf_rstd[i],
                    self.t(&lay.lnf_g),
                    &mut dx[row],
                    dg,
                    db,
                );
            }
        }

        let mut d_fc = vec![0.0; n * f];
        let mut d_ln = vec![0.0; n * d];
        let mut d_att = vec![0.0; n * d];
        let mut d_qkv = vec![0.0; n * 3 * d];
        for (blk, lc) in lay.blocks.iter().zip(&cache.layers).rev() {
            // MLP sub-block.
            d_fc.fill(0.0);
            d_ln.fill(0.0);
            for i in 0..n {
                let (dw, db) = pair_mut(grad, &blk.w_proj, &blk.b_proj);
                linear_row_backward(
                    &lc.fc_act[i * f..(i + 1) * f],
                    &dx[i * d..(i + 1) * d],
                    self.t(&blk.w_proj),
                    &mut d_fc[i * f..(i + 1) * f],
                    dw,
                    db,
                );
            }
            for (g, &z) in d_fc.iter_mut().zip(&lc.fc_pre[..n * f]) {
                *g *= gelu_grad(z);
            }
            for i in 0..n {
                let (dw, db) = pair_mut(grad, &blk.w_fc, &blk.b_fc);
                linear_row_backward(
                    &lc.ln2_out[i * d..(i + 1) * d],
                    &d_fc[i * f..(i + 1) * f],
                    self.t(&blk.w_fc),
                    &mut d_ln[i * d..(i + 1) * d],
                    dw,
                    db,
                );
            }
            for i in 0..n {
                let row = i * d..(i + 1) * d;
                let (dg, db) = pair_mut(grad, &blk.ln2_g, &blk.ln2_b);
                layer_norm_row_backward(
                    &d_ln[row.clone()],
                    &lc.ln2_xhat[row.clone()],
                    lc.ln2_rstd[i],
                    self.t(&blk.ln2_g),
                    &mut dx[row],
                    dg,
                    db,
                );
            }

            // Attention sub-block.
            d_att.fill(0.0);
            d_qkv.fill(0.0);
            d_ln.fill(0.0);
            for i in 0..n {
                let row = i * d..(i + 1) * d;
                let (dw, db) = pair_mut(grad, &blk.w_o, &blk.b_o);
                linear_row_backward(&lc.att_out[row.clone()], &dx[row.clone()], self.t(&blk.w_o), &mut d_att[row], dw, db);
            }
            let scale = 1.0 / (hd as f64).sqrt();
            let stride = 3 * d;
            let mut dp = vec![0.0; cap];
            for h in 0..nh {
                for i in 0..n {
                    let probs = &lc.probs[(h * cap + i) * cap..(h * cap + i) * cap + i + 1];
                    let dout = &d_att[i * d + h * hd..i * d + (h + 1) * hd];
                    let mut sum = 0.0;
                    for j in 0..=i {
                        let vj = &lc.qkv[j * stride + 2 * d + h * hd..j * stride + 2 * d + (h + 1) * hd];
                        dp[j] = dot(dout, vj);
                        sum += probs[j] * dp[j];
                    }
                    for j in 0..=i {
                        let ds = probs[j] * (dp[j] - sum) * scale;
                        let pj = probs[j];
                        for c in 0..hd {
                            let qi = lc.qkv[i * stride + h * hd + c];
                            let kj = lc.qkv[j * stride + d + h * hd + c];
                            d_qkv[i * stride + h * hd + c] += ds * kj;
                            d_qkv[j * stride + d + h * hd + c] += ds * qi;
                            d_qkv[j * stride + 2 * d + h * hd + c] += pj * dout[c];
                        }
                    }
                }
            }
            for i in 0..n {
                let (dw, db) = pair_mut(grad, &blk.w_qkv, &blk.b_qkv);
                linear_row_backward(
                    &lc.ln1_out[i * d..(i + 1) * d],
                    &d_qkv[i * stride..(i + 1) * stride],
                    self.t(&blk.w_qkv),
                    &mut d_ln[i * d..(i + 1) * d],
                    dw,
                    db,
                );
            }
            for i in 0..n {
                let row = i * d..(i + 1) * d;
                let (dg, db) = pair_mut(grad, &blk.ln1_g, &blk.ln1_b);
                layer_norm_row_backward(
                    &d_ln[row.clone()],
                    &lc.ln1_xhat[row.clone()],
                    lc.ln1_rstd[i],
                    self.t(&blk.ln1_g),
                    &mut dx[row],
                    dg,
                    db,
                );
            }
        }

        for i in 0..n {
            let tok = cache.tokens[i];
            for k in 0..d {
                let g = dx[i * d + k];
                grad[lay.tok_emb.start + tok * d + k] += g;
                grad[lay.pos_emb.start + i * d + k] += g;
            }
        }
    }
}

//! Fixed forward/backward pipeline for one example.

use rand::Rng as _;

use super::{C3Model, EncoderLayer, Grads, LAYER_PARAMS};
use crate::error::{Error, Result};
use crate::numcore::kernels::{
    col_sum_acc, dot, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, layer_norm_backward_row,
    layer_norm_row, sigmoid, softmax_backward_row, softmax_in_place,
};
use crate::numcore::{Tensor, EPS_LN};
use crate::rng::Rng;

/// Intermediates of one encoder layer kept for the backward pass.
#[derive(Debug, Clone)]
pub(super) struct LayerCache {
    pub(super) q: Vec<f64>,
    k: Vec<f64>,
    pub(super) v: Vec<f64>,
    /// `heads × T × T` attention probabilities.
    probs: Vec<f64>,
    pub(super) context: Vec<f64>,
    drop_attn: Option<Vec<f64>>,
    xhat1: Vec<f64>,
    inv_std1: Vec<f64>,
    y: Vec<f64>,
    f1: Vec<f64>,
    act: Vec<f64>,
    drop_ff: Option<Vec<f64>>,
    xhat2: Vec<f64>,
    inv_std2: Vec<f64>,
}

/// Token states of every layer for one (members, item) example, plus the
/// pooled vector and score once [`C3Model::pool_and_score`] has run.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// One flag per token; the last token is the item and always visible.
    pub token_mask: Vec<bool>,
    /// `H⁰ … Hᴸ`, each `T × d` row-major.
    pub states: Vec<Vec<f64>>,
    pub(super) caches: Vec<LayerCache>,
    pub pooled: Vec<f64>,
    pub logit: f64,
    pub score: f64,
    dim: usize,
}

impl ForwardTrace {
    pub fn tokens(&self) -> usize {
        self.token_mask.len()
    }

    pub fn visible_members(&self) -> usize {
        self.token_mask.iter().filter(|&&m| m).count() - 1
    }

    pub fn hidden(&self, layer: usize) -> Tensor {
        Tensor::new(vec![self.tokens(), self.dim], self.states[layer].clone())
            .expect("state shape")
    }

    /// Final hidden vector of token `j`.
    pub fn token_state(&self, j: usize) -> &[f64] {
        let last = self.states.last().expect("at least the input state");
        &last[j * self.dim..(j + 1) * self.dim]
    }
}

fn dropout_mask(rng: Option<&mut Rng>, p: f64, n: usize) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect(),
    )
}

impl C3Model {
    /// Stacks member embeddings (padding embedding where masked) followed
    /// by the item embedding into `H⁰` of shape `(width + 1) × d`.
    pub fn build_input(&self, member_ids: &[u32], member_mask: &[bool], item: u32) -> Result<Tensor> {
        let cfg = self.config();
        if member_ids.len() != member_mask.len() {
            return Err(Error::dim("build_input", "member ids and mask differ in length"));
        }
        if !member_mask.iter().any(|&m| m) {
            return Err(Error::Data("example has no visible member".into()));
        }
        if item as usize >= cfg.num_items {
            return Err(Error::Data(format!("item {item} out of range")));
        }
        let d = cfg.dim;
        let mut h0 = Vec::with_capacity((member_ids.len() + 1) * d);
        for (&u, &m) in member_ids.iter().zip(member_mask) {
            let row = if m {
                if u as usize >= cfg.num_users {
                    return Err(Error::Data(format!("user {u} out of range")));
                }
                u
            } else {
                cfg.pad_id()
            };
            h0.extend_from_slice(self.user_emb.row(row as usize));
        }
        h0.extend_from_slice(self.item_emb.row(item as usize));
        Tensor::new(vec![member_ids.len() + 1, d], h0)
    }

    /// Runs every encoder layer. Masked members are excluded as attention
    /// keys; `dropout` enables training-mode dropout on the attention and
    /// feed-forward outputs.
    pub fn encoder_forward(
        &self,
        h0: &Tensor,
        member_mask: &[bool],
        mut dropout: Option<&mut Rng>,
    ) -> Result<ForwardTrace> {
        let d = self.config().dim;
        let t = member_mask.len() + 1;
        if h0.shape() != [t, d] {
            return Err(Error::dim(
                "encoder_forward",
                format!("input shape {:?}, expected [{t}, {d}]", h0.shape()),
            ));
        }
        let mut token_mask = member_mask.to_vec();
        token_mask.push(true);
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        states.push(h0.data().to_vec());
        for layer in &self.layers {
            let x = states.last().expect("input state");
            let (out, cache) = self.layer_forward(layer, x, &token_mask, dropout.as_deref_mut());
            states.push(out);
            caches.push(cache);
        }
        let last = states.last().expect("input state");
        if last.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "encoder_forward".into(),
            });
        }
        Ok(ForwardTrace {
            token_mask,
            states,
            caches,
            pooled: Vec::new(),
            logit: 0.0,
            score: 0.0,
            dim: d,
        })
    }

    fn layer_forward(
        &self,
        layer: &EncoderLayer,
        x: &[f64],
        mask: &[bool],
        mut dropout: Option<&mut Rng>,
    ) -> (Vec<f64>, LayerCache) {
        let cfg = self.config();
        let (d, f, h) = (cfg.dim, cfg.ff_dim, cfg.heads);
        let dk = cfg.head_dim();
        let t = mask.len();
        let scale = 1.0 / (dk as f64).sqrt();

        let mut q = vec![0.0; t * d];
        let mut k = vec![0.0; t * d];
        let mut v = vec![0.0; t * d];
        gemm_acc(x, layer.wq.data(), t, d, d, &mut q);
        gemm_acc(x, layer.wk.data(), t, d, d, &mut k);
        gemm_acc(x, layer.wv.data(), t, d, d, &mut v);

        let mut probs = vec![0.0; h * t * t];
        let mut context = vec![0.0; t * d];
        for a in 0..h {
            let cols = a * dk..(a + 1) * dk;
            for i in 0..t {
                let row = &mut probs[(a * t + i) * t..(a * t + i + 1) * t];
                let qi = &q[i * d + cols.start..i * d + cols.end];
                for j in 0..t {
                    row[j] = if mask[j] {
                        dot(qi, &k[j * d + cols.start..j * d + cols.end]) * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                softmax_in_place(row);
                let ctx = &mut context[i * d + cols.start..i * d + cols.end];
                for j in 0..t {
                    let p = row[j];
                    if p == 0.0 {
                        continue;
                    }
                    for (c, &vv) in ctx.iter_mut().zip(&v[j * d + cols.start..j * d + cols.end]) {
                        *c += p * vv;
                    }
                }
            }
        }

        let mut r1 = vec![0.0; t * d];
        gemm_acc(&context, layer.wo.data(), t, d, d, &mut r1);
        let drop_attn = dropout_mask(dropout.as_deref_mut(), cfg.dropout, t * d);
        if let Some(m) = &drop_attn {
            r1.iter_mut().zip(m).for_each(|(a, s)| *a *= s);
        }
        r1.iter_mut().zip(x).for_each(|(a, xv)| *a += xv);

        let mut xhat1 = vec![0.0; t * d];
        let mut inv_std1 = vec![0.0; t];
        let mut y = vec![0.0; t * d];
        for i in 0..t {
            let rows = i * d..(i + 1) * d;
            inv_std1[i] = layer_norm_row(
                &r1[rows.clone()],
                layer.ln1_gain.data(),
                layer.ln1_bias.data(),
                EPS_LN,
                &mut xhat1[rows.clone()],
                &mut y[rows],
            )
            .inv_std;
        }

        let mut f1 = Vec::with_capacity(t * f);
        for _ in 0..t {
            f1.extend_from_slice(layer.b1.data());
        }
        gemm_acc(&y, layer.w1.data(), t, d, f, &mut f1);
        let act: Vec<f64> = f1.iter().map(|&z| z.max(0.0)).collect();
        let mut r2 = Vec::with_capacity(t * d);
        for _ in 0..t {
            r2.extend_from_slice(layer.b2.data());
        }
        gemm_acc(&act, layer.w2.data(), t, f, d, &mut r2);
        let drop_ff = dropout_mask(dropout, cfg.dropout, t * d);
        if let Some(m) = &drop_ff {
            r2.iter_mut().zip(m).for_each(|(a, s)| *a *= s);
        }
        r2.iter_mut().zip(&y).for_each(|(a, yv)| *a += yv);

        let mut xhat2 = vec![0.0; t * d];
        let mut inv_std2 = vec![0.0; t];
        let mut out = vec![0.0; t * d];
        for i in 0..t {
            let rows = i * d..(i + 1) * d;
            inv_std2[i] = layer_norm_row(
                &r2[rows.clone()],
                layer.ln2_gain.data(),
                layer.ln2_bias.data(),
                EPS_LN,
                &mut xhat2[rows.clone()],
                &mut out[rows],
            )
            .inv_std;
        }

        let cache = LayerCache {
            q,
            k,
            v,
            probs,
            context,
            drop_attn,
            xhat1,
            inv_std1,
            y,
            f1,
            act,
            drop_ff,
            xhat2,
            inv_std2,
        };
        (out, cache)
    }

    /// Mean-pools the final states of the visible members and the item,
    /// then applies the linear head and a sigmoid.
    pub fn pool_and_score(&self, trace: &mut ForwardTrace) -> f64 {
        let d = self.config().dim;
        let mut pooled = vec![0.0; d];
        for (j, _) in trace.token_mask.iter().enumerate().filter(|(_, &m)| m) {
            pooled
                .iter_mut()
                .zip(trace.token_state(j))
                .for_each(|(p, v)| *p += v);
        }
        let n = (trace.visible_members() + 1) as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        trace.logit = dot(self.head_w.data(), &pooled) + self.head_b.data()[0];
        trace.score = sigmoid(trace.logit);
        trace.pooled = pooled;
        trace.score
    }

    /// Member-consensus vector of a trace: mean of the visible member
    /// states, optionally including the item token.
    pub fn member_representation(&self, trace: &ForwardTrace) -> Vec<f64> {
        let d = self.config().dim;
        let with_item = self.config().contrastive_pool_includes_item;
        let last = trace.tokens() - 1;
        let mut rep = vec![0.0; d];
        let mut n = 0usize;
        for (j, &m) in trace.token_mask.iter().enumerate() {
            if m && (j != last || with_item) {
                rep.iter_mut()
                    .zip(trace.token_state(j))
                    .for_each(|(r, v)| *r += v);
                n += 1;
            }
        }
        rep.iter_mut().for_each(|r| *r /= n as f64);
        rep
    }

    /// Full pipeline: input assembly, encoder, pooling and score.
    pub fn forward(
        &self,
        member_ids: &[u32],
        member_mask: &[bool],
        item: u32,
        dropout: Option<&mut Rng>,
    ) -> Result<ForwardTrace> {
        let h0 = self.build_input(member_ids, member_mask, item)?;
        let mut trace = self.encoder_forward(&h0, member_mask, dropout)?;
        self.pool_and_score(&mut trace);
        Ok(trace)
    }

    /// Evaluation-mode score of a fully visible member set.
    pub fn score(&self, members: &[u32], item: u32) -> Result<f64> {
        let mask = vec![true; members.len()];
        Ok(self.forward(members, &mask, item, None)?.score)
    }

    /// Evaluation-mode member-consensus vector `h_{g'}`.
    pub fn group_representation(
        &self,
        member_ids: &[u32],
        member_mask: &[bool],
        item: u32,
    ) -> Result<Vec<f64>> {
        let trace = self.forward(member_ids, member_mask, item, None)?;
        Ok(self.member_representation(&trace))
    }

    /// Backpropagates `d_score` (gradient of the loss w.r.t. the score) and
    /// optionally `d_rep` (w.r.t. the member representation) through one
    /// example, accumulating parameter gradients into `grads`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        member_ids: &[u32],
        item: u32,
        d_score: f64,
        d_rep: Option<&[f64]>,
        grads: &mut Grads,
    ) -> Result<()> {
        let d = self.config().dim;
        let t = trace.tokens();
        let last = t - 1;
        let mut dx = vec![0.0; t * d];

        if d_score != 0.0 {
            let dlogit = d_score * trace.score * (1.0 - trace.score);
            grads
                .head_w
                .iter_mut()
                .zip(&trace.pooled)
                .for_each(|(g, p)| *g += dlogit * p);
            grads.head_b += dlogit;
            let share = dlogit / (trace.visible_members() + 1) as f64;
            for (j, _) in trace.token_mask.iter().enumerate().filter(|(_, &m)| m) {
                dx[j * d..(j + 1) * d]
                    .iter_mut()
                    .zip(self.head_w.data())
                    .for_each(|(g, w)| *g += share * w);
            }
        }
        if let Some(dr) = d_rep {
            let with_item = self.config().contrastive_pool_includes_item;
            let n = trace.visible_members() + usize::from(with_item);
            for (j, &m) in trace.token_mask.iter().enumerate() {
                if m && (j != last || with_item) {
                    dx[j * d..(j + 1) * d]
                        .iter_mut()
                        .zip(dr)
                        .for_each(|(g, v)| *g += v / n as f64);
                }
            }
        }

        for (li, layer) in self.layers.iter().enumerate().rev() {
            dx = self.layer_backward(
                layer,
                &trace.states[li],
                &trace.caches[li],
                &trace.token_mask,
                &dx,
                &mut grads.layers[li],
            );
        }

        for (j, &m) in trace.token_mask[..last].iter().enumerate() {
            if m {
                let row = grads.user_row(member_ids[j]);
                row.iter_mut()
                    .zip(&dx[j * d..(j + 1) * d])
                    .for_each(|(g, v)| *g += v);
            }
        }
        let row = grads.item_row(item);
        row.iter_mut()
            .zip(&dx[last * d..])
            .for_each(|(g, v)| *g += v);
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "encoder backward".into(),
            });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        layer: &EncoderLayer,
        x: &[f64],
        c: &LayerCache,
        mask: &[bool],
        dout: &[f64],
        g: &mut [Vec<f64>; LAYER_PARAMS],
    ) -> Vec<f64> {
        let cfg = self.config();
        let (d, f, h) = (cfg.dim, cfg.ff_dim, cfg.heads);
        let dk = cfg.head_dim();
        let t = mask.len();
        let scale = 1.0 / (dk as f64).sqrt();
        let [g_wq, g_wk, g_wv, g_wo, g_w1, g_b1, g_w2, g_b2, g_ln1g, g_ln1b, g_ln2g, g_ln2b] = g;

        // Second residual block.
        let mut dr2 = vec![0.0; t * d];
        for i in 0..t {
            let rows = i * d..(i + 1) * d;
            layer_norm_backward_row(
                &c.xhat2[rows.clone()],
                c.inv_std2[i],
                layer.ln2_gain.data(),
                &dout[rows.clone()],
                &mut dr2[rows],
                g_ln2g,
                g_ln2b,
            );
        }
        let mut dy = dr2.clone();
        let mut df2 = dr2;
        if let Some(m) = &c.drop_ff {
            df2.iter_mut().zip(m).for_each(|(a, s)| *a *= s);
        }
        col_sum_acc(&df2, d, g_b2);
        gemm_at_b_acc(&c.act, &df2, t, f, d, g_w2);
        let mut df1 = vec![0.0; t * f];
        gemm_a_bt_acc(&df2, layer.w2.data(), t, d, f, &mut df1);
        df1.iter_mut()
            .zip(&c.f1)
            .for_each(|(g, &z)| if z <= 0.0 { *g = 0.0 });
        col_sum_acc(&df1, f, g_b1);
        gemm_at_b_acc(&c.y, &df1, t, d, f, g_w1);
        gemm_a_bt_acc(&df1, layer.w1.data(), t, f, d, &mut dy);

        // First residual block.
        let mut dr1 = vec![0.0; t * d];
        for i in 0..t {
            let rows = i * d..(i + 1) * d;
            layer_norm_backward_row(
                &c.xhat1[rows.clone()],
                c.inv_std1[i],
                layer.ln1_gain.data(),
                &dy[rows.clone()],
                &mut dr1[rows],
                g_ln1g,
                g_ln1b,
            );
        }
        let mut dx = dr1.clone();
        let mut da = dr1;
        if let Some(m) = &c.drop_attn {
            da.iter_mut().zip(m).for_each(|(a, s)| *a *= s);
        }
        gemm_at_b_acc(&c.context, &da, t, d, d, g_wo);
        let mut dctx = vec![0.0; t * d];
        gemm_a_bt_acc(&da, layer.wo.data(), t, d, d, &mut dctx);

        // Attention heads.
        let mut dq = vec![0.0; t * d];
        let mut dkey = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut dp = vec![0.0; t];
        let mut ds = vec![0.0; t];
        for a in 0..h {
            let cols = a * dk..(a + 1) * dk;
            for i in 0..t {
                let p = &c.probs[(a * t + i) * t..(a * t + i + 1) * t];
                let dci = &dctx[i * d + cols.start..i * d + cols.end];
                for j in 0..t {
                    dp[j] = if p[j] == 0.0 {
                        0.0
                    } else {
                        dot(dci, &c.v[j * d + cols.start..j * d + cols.end])
                    };
                    if p[j] != 0.0 {
                        for (dvv, &dcv) in dv[j * d + cols.start..j * d + cols.end]
                            .iter_mut()
                            .zip(dci)
                        {
                            *dvv += p[j] * dcv;
                        }
                    }
                }
                softmax_backward_row(p, &dp, &mut ds);
                for j in 0..t {
                    let s = ds[j] * scale;
                    if s == 0.0 {
                        continue;
                    }
                    for cc in cols.clone() {
                        dq[i * d + cc] += s * c.k[j * d + cc];
                        dkey[j * d + cc] += s * c.q[i * d + cc];
                    }
                }
            }
        }
        gemm_at_b_acc(x, &dq, t, d, d, g_wq);
        gemm_at_b_acc(x, &dkey, t, d, d, g_wk);
        gemm_at_b_acc(x, &dv, t, d, d, g_wv);
        gemm_a_bt_acc(&dq, layer.wq.data(), t, d, d, &mut dx);
        gemm_a_bt_acc(&dkey, layer.wk.data(), t, d, d, &mut dx);
        gemm_a_bt_acc(&dv, layer.wv.data(), t, d, d, &mut dx);
        dx
    }
}

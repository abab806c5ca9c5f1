//! Training objectives and their gradients.
//!
//! Recommendation terms act on sigmoid scores: `−log(s + ε)` on positives,
//! `exp(s) − 1` on negatives, and a hinge `max(0, δ − (s_p − s_n))` over each
//! positive's own negatives, mixed as `α(pos + neg) + (1 − α)·margin`. The
//! contrastive term is InfoNCE over pairs of masked group views, symmetrized
//! over both anchors of each pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub beta: f64,
    pub mask_ratio: f64,
    pub aug_threshold: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            delta: 1.0,
            epsilon: 1e-8,
            tau: 1.0,
            beta: 0.1,
            mask_ratio: 0.8,
            aug_threshold: 3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be non-negative");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio must lie in (0, 1)");
        }
        if self.aug_threshold < 2 {
            return bad("aug_threshold must be at least 2");
        }
        Ok(())
    }
}

/// Decomposed loss of one batch (or an average over batches).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_margin: f64,
    pub l_main: f64,
    pub l_cont: f64,
    pub l_total: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_pairs: usize,
}

impl LossReport {
    /// Unweighted mean of the scalar terms; counts are summed.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        if reports.is_empty() {
            return LossReport::default();
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport {
            l_pos: avg(|r| r.l_pos),
            l_neg: avg(|r| r.l_neg),
            l_margin: avg(|r| r.l_margin),
            l_main: avg(|r| r.l_main),
            l_cont: avg(|r| r.l_cont),
            l_total: avg(|r| r.l_total),
            n_pos: reports.iter().map(|r| r.n_pos).sum(),
            n_neg: reports.iter().map(|r| r.n_neg).sum(),
            n_pairs: reports.iter().map(|r| r.n_pairs).sum(),
        }
    }
}

pub fn positive_loss(scores: &[f64], epsilon: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("positive_loss"));
    }
    Ok(scores.iter().map(|s| -(s + epsilon).ln()).sum::<f64>() / scores.len() as f64)
}

pub fn positive_loss_grad(scores: &[f64], epsilon: f64) -> Vec<f64> {
    let n = scores.len() as f64;
    scores.iter().map(|s| -1.0 / ((s + epsilon) * n)).collect()
}

pub fn negative_loss(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("negative_loss"));
    }
    Ok(scores.iter().map(|s| s.exp_m1()).sum::<f64>() / scores.len() as f64)
}

pub fn negative_loss_grad(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    scores.iter().map(|s| s.exp() / n).collect()
}

/// Hinge over all positive × negative pairs of one entity.
pub fn margin_loss(pos: &[f64], neg: &[f64], delta: f64) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("margin_loss"));
    }
    let per_pos = |sp: f64| neg.iter().map(|sn| (delta - (sp - sn)).max(0.0)).sum::<f64>() / neg.len() as f64;
    Ok(pos.iter().map(|&sp| per_pos(sp)).sum::<f64>() / pos.len() as f64)
}

pub fn main_loss(l_pos: f64, l_neg: f64, l_margin: f64, alpha: f64) -> f64 {
    alpha * (l_pos + l_neg) + (1.0 - alpha) * l_margin
}

pub fn total_loss(l_main: f64, l_cont: f64, beta: f64) -> f64 {
    l_main + beta * l_cont
}

/// One positive score and the scores of its own sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSlice {
    pub pos: f64,
    pub neg: Vec<f64>,
}

/// Recommendation loss of a batch with gradients w.r.t. every score.
#[derive(Debug, Clone, PartialEq)]
pub struct MainLoss {
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_margin: f64,
    pub l_main: f64,
    pub n_pairs: usize,
    /// `d l_main / d s_p`, one per slice.
    pub d_pos: Vec<f64>,
    /// `d l_main / d s_n`, one vector per slice.
    pub d_neg: Vec<Vec<f64>>,
}

/// `L_pos` and `L_neg` average over every positive and negative in the
/// batch; `L_margin` pairs each positive only with its own negatives.
pub fn batch_main_loss(slices: &[ScoreSlice], cfg: &LossConfig) -> Result<MainLoss> {
    let pos: Vec<f64> = slices.iter().map(|s| s.pos).collect();
    let neg: Vec<f64> = slices.iter().flat_map(|s| s.neg.iter().copied()).collect();
    let l_pos = positive_loss(&pos, cfg.epsilon)?;
    let l_neg = negative_loss(&neg)?;
    if slices.iter().any(|s| s.neg.is_empty()) {
        return Err(Error::Empty("margin_loss"));
    }
    let n_p = slices.len() as f64;
    let mut l_margin = 0.0;
    let mut d_pos = vec![0.0; slices.len()];
    let mut d_neg: Vec<Vec<f64>> = slices.iter().map(|s| vec![0.0; s.neg.len()]).collect();
    let alpha = cfg.alpha;
    for (k, s) in slices.iter().enumerate() {
        let n_n = s.neg.len() as f64;
        for (j, &sn) in s.neg.iter().enumerate() {
            let h = cfg.delta - (s.pos - sn);
            if h > 0.0 {
                l_margin += h / (n_p * n_n);
                let w = (1.0 - alpha) / (n_p * n_n);
                d_pos[k] -= w;
                d_neg[k][j] += w;
            }
        }
    }
    let gp = positive_loss_grad(&pos, cfg.epsilon);
    let gn = negative_loss_grad(&neg);
    let mut flat = 0;
    for (k, s) in slices.iter().enumerate() {
        d_pos[k] += alpha * gp[k];
        for j in 0..s.neg.len() {
            d_neg[k][j] += alpha * gn[flat];
            flat += 1;
        }
    }
    Ok(MainLoss {
        l_pos,
        l_neg,
        l_margin,
        l_main: main_loss(l_pos, l_neg, l_margin, alpha),
        n_pairs: neg.len(),
        d_pos,
        d_neg,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// InfoNCE over `2B` views where views `2j` and `2j + 1` are a positive
/// pair. Each view anchors once; its denominator runs over the other
/// `2B − 1` views. Returns the loss averaged over anchors and its gradient
/// w.r.t. every view.
pub fn info_nce(views: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = views.len();
    if n % 2 != 0 {
        return Err(Error::dim("info_nce", format!("{n} views cannot form pairs")));
    }
    let zero_grads = || views.iter().map(|v| vec![0.0; v.len()]).collect();
    if n < 4 {
        if n == 2 {
            log::warn!("contrastive batch has a single pair; term is identically zero");
        }
        return Ok((0.0, zero_grads()));
    }
    let d = views[0].len();
    if views.iter().any(|v| v.len() != d) {
        return Err(Error::dim("info_nce", "views differ in dimension"));
    }
    let norms: Vec<f64> = views
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "info_nce: zero or non-finite view norm".into(),
        });
    }
    let units: Vec<Vec<f64>> = views
        .iter()
        .zip(&norms)
        .map(|(v, &nv)| v.iter().map(|x| x / nv).collect())
        .collect();
    let sim = |a: usize, b: usize| -> f64 { units[a].iter().zip(&units[b]).map(|(x, y)| x * y).sum() };

    let mut loss = 0.0;
    let mut d_units = vec![vec![0.0; d]; n];
    let scale = 1.0 / n as f64;
    let mut logits = vec![0.0; n];
    for a in 0..n {
        let partner = a ^ 1;
        for (k, l) in logits.iter_mut().enumerate() {
            *l = if k == a { f64::NEG_INFINITY } else { sim(a, k) / tau };
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[partner];
        for k in 0..n {
            if k == a {
                continue;
            }
            let p = (logits[k] - lse).exp();
            let g = scale * (p - f64::from(u8::from(k == partner))) / tau;
            if g == 0.0 {
                continue;
            }
            for c in 0..d {
                d_units[a][c] += g * units[k][c];
                d_units[k][c] += g * units[a][c];
            }
        }
    }
    loss *= scale;
    let grads = d_units
        .iter()
        .zip(&units)
        .zip(&norms)
        .map(|((du, u), &nv)| {
            let radial: f64 = du.iter().zip(u).map(|(x, y)| x * y).sum();
            du.iter().zip(u).map(|(g, uu)| (g - uu * radial) / nv).collect()
        })
        .collect();
    Ok((loss, grads))
}

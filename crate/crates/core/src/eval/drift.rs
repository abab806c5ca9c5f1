//! Consensus drift: how far a group's member representation moves when most
//! of its members are hidden, and embedding export for external plotting.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{eval_negatives, rank_of};
use crate::data::{Entity, InteractionDataset};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::loss::cosine;
use crate::model::C3Model;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub mask_ratio: f64,
    pub trials: usize,
    pub seed: u64,
    pub n_eval_neg: usize,
    pub execution: Execution,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.8,
            trials: 1,
            seed: 0,
            n_eval_neg: 100,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDrift {
    pub group_id: u32,
    pub trial: usize,
    pub group_size: usize,
    pub masked: usize,
    pub cosine: f64,
    pub rank_original: usize,
    pub rank_masked: usize,
    /// `rank_masked − rank_original`; positive means the item fell.
    pub rank_change: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub mask_ratio: f64,
    pub trials: usize,
    pub seed: u64,
    pub n_groups: usize,
    pub mean_cosine: f64,
    pub median_cosine: f64,
    pub min_cosine: f64,
    pub max_cosine: f64,
    pub mean_rank_change: f64,
    pub per_group: Vec<GroupDrift>,
}

/// Members hidden from a group of `size`: `floor(ratio·size)`, keeping at
/// least one visible. Unlike training views, a zero count stays zero.
pub fn drift_mask_count(size: usize, ratio: f64) -> usize {
    if size == 0 {
        return 0;
    }
    let raw = (ratio * size as f64 + 1e-9).floor() as usize;
    raw.min(size - 1)
}

/// Item used as the encoder's item token: the held-out test item when the
/// group has one, otherwise its last positive.
fn anchor_item(ds: &InteractionDataset, g: u32) -> Option<u32> {
    let e = Entity::group(g);
    ds.split(e)
        .and_then(|s| s.test)
        .or_else(|| ds.positives(e).last().copied())
}

fn drift_mask(size: usize, ratio: f64, seed: u64, g: u32, trial: usize) -> Vec<bool> {
    let k = drift_mask_count(size, ratio);
    let mut r = rng::stream(seed, rng::DRIFT, &[u64::from(g), trial as u64]);
    let mut mask = vec![true; size];
    for i in index::sample(&mut r, size, k) {
        mask[i] = false;
    }
    mask
}

fn rank_with(
    model: &C3Model,
    members: &[u32],
    mask: &[bool],
    target: u32,
    negatives: &[u32],
) -> Result<usize> {
    let score = |i| model.forward(members, mask, i, None).map(|t| t.score);
    let ts = score(target)?;
    let scores = negatives.iter().map(|&i| score(i)).collect::<Result<Vec<_>>>()?;
    Ok(rank_of(target, ts, negatives, &scores))
}

pub fn consensus_drift(model: &C3Model, ds: &InteractionDataset, cfg: &DriftConfig) -> Result<DriftReport> {
    if !(0.0..1.0).contains(&cfg.mask_ratio) {
        return Err(Error::Config("mask_ratio must lie in [0, 1)".into()));
    }
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    let groups: Vec<u32> = (0..ds.num_groups() as u32)
        .filter(|&g| ds.group_members(g).len() >= 2)
        .collect();
    let jobs = groups.len() * cfg.trials;
    let results = map_range(cfg.execution, jobs, |j| -> Result<Option<GroupDrift>> {
        let g = groups[j / cfg.trials];
        let trial = j % cfg.trials;
        let Some(item) = anchor_item(ds, g) else {
            return Ok(None);
        };
        let members = ds.group_members(g);
        let full = vec![true; members.len()];
        let mask = drift_mask(members.len(), cfg.mask_ratio, cfg.seed, g, trial);
        let h = model.group_representation(members, &full, item)?;
        let hm = model.group_representation(members, &mask, item)?;
        let negatives = eval_negatives(ds, Entity::group(g), item, cfg.n_eval_neg, cfg.seed)?;
        let rank_original = rank_with(model, members, &full, item, &negatives)?;
        let rank_masked = rank_with(model, members, &mask, item, &negatives)?;
        Ok(Some(GroupDrift {
            group_id: g,
            trial,
            group_size: members.len(),
            masked: mask.iter().filter(|&&m| !m).count(),
            cosine: cosine(&h, &hm),
            rank_original,
            rank_masked,
            rank_change: rank_masked as i64 - rank_original as i64,
        }))
    });
    let mut per_group = Vec::with_capacity(jobs);
    for r in results {
        if let Some(d) = r? {
            per_group.push(d);
        }
    }
    if per_group.is_empty() {
        return Err(Error::Empty("consensus_drift: no group with at least 2 members"));
    }
    let mut cos: Vec<f64> = per_group.iter().map(|d| d.cosine).collect();
    cos.sort_by(f64::total_cmp);
    let n = cos.len();
    let median = if n % 2 == 1 { cos[n / 2] } else { (cos[n / 2 - 1] + cos[n / 2]) / 2.0 };
    Ok(DriftReport {
        mask_ratio: cfg.mask_ratio,
        trials: cfg.trials,
        seed: cfg.seed,
        n_groups: groups.len(),
        mean_cosine: cos.iter().sum::<f64>() / n as f64,
        median_cosine: median,
        min_cosine: cos[0],
        max_cosine: cos[n - 1],
        mean_rank_change: per_group.iter().map(|d| d.rank_change as f64).sum::<f64>() / n as f64,
        per_group,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub group_id: u32,
    pub variant: String,
    pub values: Vec<f64>,
}

/// Writes the original and one masked representation per group as CSV:
/// `group_id,variant,dim_0,…`. Values use 17 significant digits.
pub fn export_embeddings(
    model: &C3Model,
    ds: &InteractionDataset,
    mask_ratio: f64,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let d = model.config().dim;
    let mut out = String::from("group_id,variant");
    for k in 0..d {
        let _ = write!(out, ",dim_{k}");
    }
    out.push('\n');
    let mut rows = 0;
    for g in 0..ds.num_groups() as u32 {
        let Some(item) = anchor_item(ds, g) else {
            continue;
        };
        let members = ds.group_members(g);
        let full = vec![true; members.len()];
        let mask = drift_mask(members.len(), mask_ratio, seed, g, 0);
        for (variant, m) in [("original", &full), ("masked", &mask)] {
            let h = model.group_representation(members, m, item)?;
            let _ = write!(out, "{g},{variant}");
            for v in h {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
            rows += 1;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.to_path_buf();
    let parse_err = |line: usize, message: String| Error::Parse {
        file: file.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(parse_err(i + 1, format!("expected {width} fields, found {}", fields.len())));
        }
        let group_id = fields[0].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
        let values = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(i + 1, format!("{e}"))))
            .collect::<Result<_>>()?;
        rows.push(EmbeddingRow {
            group_id,
            variant: fields[1].to_string(),
            values,
        });
    }
    Ok(rows)
}

//! Leave-one-out ranking evaluation.
//!
//! Each eligible entity's held-out item is ranked against sampled negatives
//! by descending score; ties go to the smaller item id. Negative draws are
//! keyed by (seed, task, entity, target) so results do not depend on thread
//! count or on which scorer is evaluated.

mod drift;

pub use drift::{
    consensus_drift, drift_mask_count, export_embeddings, read_embeddings, DriftConfig,
    DriftReport, EmbeddingRow, GroupDrift,
};

use serde::{Deserialize, Serialize};

use crate::data::{sample_negatives, Entity, InteractionDataset, Task};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::model::C3Model;
use crate::rng;

/// Anything that can score candidate items for an entity.
pub trait Scorer: Sync {
    fn score_items(&self, ds: &InteractionDataset, entity: Entity, items: &[u32]) -> Result<Vec<f64>>;
}

impl Scorer for C3Model {
    fn score_items(&self, ds: &InteractionDataset, entity: Entity, items: &[u32]) -> Result<Vec<f64>> {
        let members = ds.members(entity);
        items.iter().map(|&i| self.score(members, i)).collect()
    }
}

/// Scores items by their train-split interaction count within the task.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    user_counts: Vec<f64>,
    group_counts: Vec<f64>,
}

impl Popularity {
    pub fn counts(&self, task: Task) -> &[f64] {
        match task {
            Task::User => &self.user_counts,
            Task::Group => &self.group_counts,
        }
    }
}

impl Scorer for Popularity {
    fn score_items(&self, _: &InteractionDataset, entity: Entity, items: &[u32]) -> Result<Vec<f64>> {
        let counts = self.counts(entity.task);
        Ok(items.iter().map(|&i| counts[i as usize]).collect())
    }
}

pub fn popularity_baseline(ds: &InteractionDataset) -> Result<Popularity> {
    let splits = ds
        .splits()
        .ok_or_else(|| Error::Data("popularity baseline requires a split dataset".into()))?;
    let count = |per_entity: &[crate::data::EntitySplit]| {
        let mut c = vec![0.0; ds.num_items()];
        for s in per_entity {
            for &i in &s.train {
                c[i as usize] += 1.0;
            }
        }
        c
    };
    Ok(Popularity {
        user_counts: count(&splits.users),
        group_counts: count(&splits.groups),
    })
}

/// Which held-out item is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Validation,
    Test,
}

impl Target {
    /// The held-out item of an entity, if it has one.
    pub fn item(self, ds: &InteractionDataset, entity: Entity) -> Option<u32> {
        let split = ds.split(entity)?;
        match self {
            Target::Validation => split.val,
            Target::Test => split.test,
        }
    }
}

/// 1-based rank of `target` among `candidates` given their scores, where
/// `scores[k]` belongs to `candidates[k]`. Higher scores rank first and ties
/// go to the smaller item id.
pub fn rank_of(target: u32, target_score: f64, candidates: &[u32], scores: &[f64]) -> usize {
    1 + candidates
        .iter()
        .zip(scores)
        .filter(|&(&c, &s)| c != target && (s > target_score || (s == target_score && c < target)))
        .count()
}

/// Number of negatives that covers the whole catalog minus the positives.
pub fn full_catalog_negatives(ds: &InteractionDataset, entity: Entity) -> usize {
    ds.num_items() - ds.positives(entity).len()
}

/// Negatives used to rank `target` for `entity`.
pub fn eval_negatives(
    ds: &InteractionDataset,
    entity: Entity,
    target: u32,
    n_eval_neg: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let mut r = rng::stream(
        seed,
        rng::EVAL,
        &[entity.task.code(), u64::from(entity.id), u64::from(target)],
    );
    sample_negatives(ds, entity, n_eval_neg, &mut r)
}

/// Ranks `target` against `n_eval_neg` sampled negatives.
pub fn rank_entity(
    scorer: &dyn Scorer,
    ds: &InteractionDataset,
    entity: Entity,
    target: u32,
    n_eval_neg: usize,
    seed: u64,
) -> Result<usize> {
    let mut items = eval_negatives(ds, entity, target, n_eval_neg, seed)?;
    items.push(target);
    let scores = scorer.score_items(ds, entity, &items)?;
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            context: format!("score {bad} for {:?} {}", entity.task, entity.id),
        });
    }
    let ts = *scores.last().expect("target was pushed");
    Ok(rank_of(target, ts, &items, &scores))
}

fn check_k(k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    Ok(())
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if ranks.is_empty() {
        return Ok(0.0);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// NDCG@K with one relevant item per list: `1/log2(rank + 1)` inside the
/// cutoff, else 0, averaged over lists.
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if ranks.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = ranks
        .iter()
        .filter(|&&r| r >= 1 && r <= k)
        .map(|&r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    Ok(sum / ranks.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub n_evaluated: usize,
    pub hr_1: f64,
    pub hr_5: f64,
    pub hr_10: f64,
    pub ndcg_5: f64,
    pub ndcg_10: f64,
}

impl TaskMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let hr = |k| hr_at_k(ranks, k).expect("k >= 1");
        let ndcg = |k| ndcg_at_k(ranks, k).expect("k >= 1");
        Self {
            n_evaluated: ranks.len(),
            hr_1: hr(1),
            hr_5: hr(5),
            hr_10: hr(10),
            ndcg_5: ndcg(5),
            ndcg_10: ndcg(10),
        }
    }
}

/// Group-size bucket boundaries, inclusive.
pub const SIZE_BUCKETS: [(usize, usize, &str); 3] =
    [(2, 5, "2-5"), (6, 9, "6-9"), (10, usize::MAX, "10+")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: String,
    pub n_evaluated: usize,
    pub hr_10: f64,
    pub ndcg_5: f64,
    pub ndcg_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: Target,
    pub n_eval_neg: usize,
    pub seed: u64,
    pub user: TaskMetrics,
    pub group: TaskMetrics,
    pub group_buckets: Vec<BucketMetrics>,
}

impl EvalReport {
    /// Plain-text table of the headline metrics.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "task", "n", "HR@1", "HR@5", "HR@10", "NDCG@5", "NDCG@10"
        );
        for (name, m) in [("user", &self.user), ("group", &self.group)] {
            out += &format!(
                "{:<8} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
                name, m.n_evaluated, m.hr_1, m.hr_5, m.hr_10, m.ndcg_5, m.ndcg_10
            );
        }
        for b in &self.group_buckets {
            out += &format!(
                "{:<8} {:>6} {:>7} {:>7} {:>7.4} {:>7.4} {:>7.4}\n",
                format!("g{}", b.bucket),
                b.n_evaluated,
                "-",
                "-",
                b.hr_10,
                b.ndcg_5,
                b.ndcg_10
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_eval_neg: usize,
    pub seed: u64,
    pub target: Target,
    pub execution: Execution,
    /// Evaluate the user task as well as the group task.
    pub include_users: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_eval_neg: 100,
            seed: 0,
            target: Target::Test,
            execution: Execution::default(),
            include_users: true,
        }
    }
}

/// Ranks for every eligible entity of a task, in entity-id order.
pub fn task_ranks(
    scorer: &dyn Scorer,
    ds: &InteractionDataset,
    task: Task,
    cfg: &EvalConfig,
) -> Result<Vec<(u32, usize)>> {
    let n = ds.num_entities(task);
    let per_entity = map_range(cfg.execution, n, |id| -> Result<Option<(u32, usize)>> {
        let entity = Entity { task, id: id as u32 };
        let Some(target) = cfg.target.item(ds, entity) else {
            return Ok(None);
        };
        let r = rank_entity(scorer, ds, entity, target, cfg.n_eval_neg, cfg.seed)?;
        Ok(Some((entity.id, r)))
    });
    let mut out = Vec::new();
    for r in per_entity {
        if let Some(x) = r? {
            out.push(x);
        }
    }
    Ok(out)
}

pub fn evaluate(scorer: &dyn Scorer, ds: &InteractionDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if ds.splits().is_none() {
        return Err(Error::Data("evaluation requires a split dataset".into()));
    }
    let user_ranks: Vec<usize> = if cfg.include_users {
        task_ranks(scorer, ds, Task::User, cfg)?.into_iter().map(|(_, r)| r).collect()
    } else {
        Vec::new()
    };
    let group = task_ranks(scorer, ds, Task::Group, cfg)?;
    let group_ranks: Vec<usize> = group.iter().map(|&(_, r)| r).collect();
    let group_buckets = SIZE_BUCKETS
        .iter()
        .map(|&(lo, hi, name)| {
            let ranks: Vec<usize> = group
                .iter()
                .filter(|&&(g, _)| (lo..=hi).contains(&ds.group_members(g).len()))
                .map(|&(_, r)| r)
                .collect();
            let m = TaskMetrics::from_ranks(&ranks);
            BucketMetrics {
                bucket: name.to_string(),
                n_evaluated: m.n_evaluated,
                hr_10: m.hr_10,
                ndcg_5: m.ndcg_5,
                ndcg_10: m.ndcg_10,
            }
        })
        .collect();
    Ok(EvalReport {
        target: cfg.target,
        n_eval_neg: cfg.n_eval_neg,
        seed: cfg.seed,
        user: TaskMetrics::from_ranks(&user_ranks),
        group: TaskMetrics::from_ranks(&group_ranks),
        group_buckets,
    })
}

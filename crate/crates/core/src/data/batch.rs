//! Epoch planning: shuffled positives, in-batch negatives, padding masks and
//! member-masking augmentation views.

use std::ops::Range;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{sample_negatives, Entity, InteractionDataset, Task};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Positive examples per batch.
    pub batch_size: usize,
    pub neg_per_pos: usize,
    pub mask_ratio: f64,
    /// Groups with at least this many members get augmentation views.
    pub aug_threshold: usize,
    /// Fraction of batches drawn from the user task.
    pub task_mix: f64,
    pub augment: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            neg_per_pos: 4,
            mask_ratio: 0.4,
            aug_threshold: 3,
            task_mix: 0.5,
            augment: true,
        }
    }
}

/// One positive row and the rows of its own negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginSlice {
    pub positive: usize,
    pub negatives: Range<usize>,
}

/// Two independent member masks over the same batch row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPair {
    pub row: usize,
    pub views: [Vec<bool>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub task: Task,
    /// Padded member width (Lmax).
    pub width: usize,
    /// `rows × width`, padded with `pad_id`.
    pub member_ids: Vec<u32>,
    pub member_mask: Vec<bool>,
    pub item_ids: Vec<u32>,
    pub labels: Vec<bool>,
    pub entity_ids: Vec<u32>,
    pub slices: Vec<MarginSlice>,
    pub aug_views: Vec<AugmentedPair>,
    pub pad_id: u32,
}

impl TrainBatch {
    pub fn rows(&self) -> usize {
        self.item_ids.len()
    }

    pub fn member_row(&self, row: usize) -> (&[u32], &[bool]) {
        let r = row * self.width..(row + 1) * self.width;
        (&self.member_ids[r.clone()], &self.member_mask[r])
    }

    /// Unmasked members of a row.
    pub fn active_members(&self, row: usize) -> Vec<u32> {
        let (ids, mask) = self.member_row(row);
        select(ids, mask)
    }

    /// Members left visible by one augmentation view.
    pub fn view_members(&self, pair: &AugmentedPair, view: usize) -> Vec<u32> {
        let (ids, _) = self.member_row(pair.row);
        select(ids, &pair.views[view])
    }
}

fn select(ids: &[u32], mask: &[bool]) -> Vec<u32> {
    ids.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| id)
        .collect()
}

/// Number of members removed by one augmentation view of a group of
/// `group_size`: `floor(ratio·size)`, raised to 1 when that is 0, and capped
/// so at least one member stays visible.
pub fn mask_count(group_size: usize, ratio: f64) -> usize {
    if group_size <= 1 {
        return 0;
    }
    // Small slack so that e.g. 0.6·5 does not floor to 2 from rounding.
    let raw = (ratio * group_size as f64 + 1e-9).floor() as usize;
    raw.max(1).min(group_size - 1)
}

/// Number of user-task batches scheduled alongside `group_batches`.
fn user_batch_count(group_batches: usize, user_available: usize, task_mix: f64) -> usize {
    if group_batches == 0 || task_mix >= 1.0 {
        return user_available;
    }
    if task_mix <= 0.0 {
        return 0;
    }
    let wanted = (group_batches as f64 * task_mix / (1.0 - task_mix)).round() as usize;
    wanted.min(user_available)
}

fn train_positives(ds: &InteractionDataset, task: Task) -> Result<Vec<(u32, u32)>> {
    let mut out = Vec::new();
    for id in 0..ds.num_entities(task) as u32 {
        let split = ds
            .split(Entity { task, id })
            .ok_or_else(|| Error::Data("batches require a split dataset".into()))?;
        out.extend(split.train.iter().map(|&item| (id, item)));
    }
    Ok(out)
}

/// Builds every batch of one epoch, interleaving user and group batches
/// according to `task_mix`. The epoch length is set by the group positives;
/// user positives are reshuffled each epoch and the needed prefix is used.
pub fn make_batches(
    ds: &InteractionDataset,
    cfg: &BatchConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<TrainBatch>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut per_task = Vec::new();
    for task in [Task::User, Task::Group] {
        let mut pos = train_positives(ds, task)?;
        let mut r = rng::stream(seed, rng::SHUFFLE, &[epoch, task.code()]);
        pos.shuffle(&mut r);
        per_task.push(pos);
    }
    let group_pos = per_task.pop().unwrap_or_default();
    let user_pos = per_task.pop().unwrap_or_default();

    let bs = cfg.batch_size;
    let group_batches = if cfg.task_mix >= 1.0 {
        0
    } else {
        group_pos.len().div_ceil(bs)
    };
    let user_batches = user_batch_count(group_batches, user_pos.len().div_ceil(bs), cfg.task_mix);
    let total = group_batches + user_batches;

    let mut out = Vec::with_capacity(total);
    let (mut gi, mut ui) = (0usize, 0usize);
    for i in 0..total {
        let take_user = (i + 1) * user_batches / total > i * user_batches / total;
        let (task, chunk) = if take_user {
            let c = &user_pos[(ui * bs).min(user_pos.len())..((ui + 1) * bs).min(user_pos.len())];
            ui += 1;
            (Task::User, c)
        } else {
            let c =
                &group_pos[(gi * bs).min(group_pos.len())..((gi + 1) * bs).min(group_pos.len())];
            gi += 1;
            (Task::Group, c)
        };
        out.push(build_batch(ds, cfg, seed, epoch, task, chunk)?);
    }
    Ok(out)
}

fn build_batch(
    ds: &InteractionDataset,
    cfg: &BatchConfig,
    seed: u64,
    epoch: u64,
    task: Task,
    positives: &[(u32, u32)],
) -> Result<TrainBatch> {
    let width = positives
        .iter()
        .map(|&(id, _)| ds.members(Entity { task, id }).len())
        .max()
        .unwrap_or(1);
    let pad_id = ds.num_users() as u32;
    let rows = positives.len() * (1 + cfg.neg_per_pos);
    let mut batch = TrainBatch {
        task,
        width,
        member_ids: Vec::with_capacity(rows * width),
        member_mask: Vec::with_capacity(rows * width),
        item_ids: Vec::with_capacity(rows),
        labels: Vec::with_capacity(rows),
        entity_ids: Vec::with_capacity(rows),
        slices: Vec::with_capacity(positives.len()),
        aug_views: Vec::new(),
        pad_id,
    };
    for &(id, item) in positives {
        let entity = Entity { task, id };
        let members = ds.members(entity);
        let coords = [epoch, task.code(), u64::from(id), u64::from(item)];
        let mut neg_rng = rng::stream(seed, rng::NEGATIVES, &coords);
        let negatives = sample_negatives(ds, entity, cfg.neg_per_pos, &mut neg_rng)?;

        let pos_row = batch.rows();
        for (label, it) in std::iter::once((true, item)).chain(negatives.iter().map(|&n| (false, n)))
        {
            batch.member_ids.extend_from_slice(members);
            batch.member_mask.extend(std::iter::repeat_n(true, members.len()));
            batch.member_ids.extend(std::iter::repeat_n(pad_id, width - members.len()));
            batch.member_mask.extend(std::iter::repeat_n(false, width - members.len()));
            batch.item_ids.push(it);
            batch.labels.push(label);
            batch.entity_ids.push(id);
        }
        batch.slices.push(MarginSlice {
            positive: pos_row,
            negatives: pos_row + 1..batch.rows(),
        });

        if cfg.augment && task == Task::Group && members.len() >= cfg.aug_threshold {
            let removed = mask_count(members.len(), cfg.mask_ratio);
            let mut mask_rng = rng::stream(seed, rng::MASKING, &coords);
            let mut view = || {
                let mut mask = vec![false; width];
                mask[..members.len()].fill(true);
                for i in index::sample(&mut mask_rng, members.len(), removed) {
                    mask[i] = false;
                }
                mask
            };
            let views = [view(), view()];
            batch.aug_views.push(AugmentedPair {
                row: pos_row,
                views,
            });
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::leave_one_out_split;

    #[test]
    fn mask_counts() {
        assert_eq!(mask_count(5, 0.4), 2);
        assert_eq!(mask_count(4, 0.2), 1);
        assert_eq!(mask_count(5, 0.6), 3);
        assert_eq!(mask_count(2, 0.8), 1);
        assert_eq!(mask_count(10, 0.8), 8);
        assert_eq!(mask_count(3, 0.99), 2);
        assert_eq!(mask_count(1, 0.5), 0);
    }

    fn ds(group_size: u32) -> InteractionDataset {
        let ds = InteractionDataset::new(
            group_size as usize,
            40,
            vec![(0..group_size).collect()],
            (0..group_size).map(|u| vec![u, u + 10, u + 20]).collect(),
            vec![vec![30, 31, 32, 33, 34]],
        )
        .unwrap();
        leave_one_out_split(ds, 3)
    }

    #[test]
    fn threshold_guards_augmentation() {
        let cfg = BatchConfig {
            aug_threshold: 3,
            ..BatchConfig::default()
        };
        let batches = make_batches(&ds(2), &cfg, 1, 0).unwrap();
        assert!(batches.iter().all(|b| b.aug_views.is_empty()));
        let batches = make_batches(&ds(5), &cfg, 1, 0).unwrap();
        let group = batches.iter().find(|b| b.task == Task::Group).unwrap();
        assert_eq!(group.aug_views.len(), 3);
        for pair in &group.aug_views {
            for v in &pair.views {
                assert_eq!(v.iter().filter(|&&m| m).count(), 5 - 2);
            }
        }
    }

    #[test]
    fn rows_layout_and_masks() {
        let cfg = BatchConfig::default();
        let batches = make_batches(&ds(3), &cfg, 1, 0).unwrap();
        for b in &batches {
            for s in &b.slices {
                assert!(b.labels[s.positive]);
                assert_eq!(s.negatives.len(), cfg.neg_per_pos);
                assert!(s.negatives.clone().all(|r| !b.labels[r]));
            }
            for row in 0..b.rows() {
                let expected = match b.task {
                    Task::User => 1,
                    Task::Group => 3,
                };
                assert_eq!(b.member_row(row).1.iter().filter(|&&m| m).count(), expected);
            }
        }
    }

    #[test]
    fn alternates_tasks_one_to_one() {
        let members: Vec<Vec<u32>> = (0..20).map(|g| vec![g, (g + 1) % 20]).collect();
        let items: Vec<Vec<u32>> = (0..20).map(|g| vec![g, g + 20, g + 40, g + 60]).collect();
        let ds = InteractionDataset::new(20, 100, members, items.clone(), items).unwrap();
        let ds = leave_one_out_split(ds, 0);
        let cfg = BatchConfig {
            batch_size: 8,
            ..BatchConfig::default()
        };
        let tasks: Vec<Task> = make_batches(&ds, &cfg, 0, 0)
            .unwrap()
            .iter()
            .map(|b| b.task)
            .collect();
        // 40 group positives -> 5 group batches, matched by 5 user batches.
        assert_eq!(tasks.len(), 10);
        for pair in tasks.chunks(2) {
            assert_eq!(pair, [Task::Group, Task::User]);
        }
    }

    #[test]
    fn requires_split() {
        let raw = InteractionDataset::new(1, 3, vec![vec![0]], vec![vec![0]], vec![vec![1]]).unwrap();
        assert!(make_batches(&raw, &BatchConfig::default(), 0, 0).is_err());
    }
}

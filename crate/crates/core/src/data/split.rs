use rand::seq::index;

use super::{Entity, EntitySplit, InteractionDataset, Splits, Task};
use crate::rng;

/// Entities need at least this many positives to get a validation and a
/// test item.
pub const MIN_POSITIVES_FOR_EVAL: usize = 3;

fn split_entity(ds: &InteractionDataset, entity: Entity, seed: u64) -> EntitySplit {
    let pos = ds.positives(entity);
    if pos.len() < MIN_POSITIVES_FOR_EVAL {
        return EntitySplit {
            train: pos.to_vec(),
            val: None,
            test: None,
        };
    }
    let mut r = rng::stream(seed, rng::SPLIT, &[entity.task.code(), u64::from(entity.id)]);
    let picked = index::sample(&mut r, pos.len(), 2);
    let (test_idx, val_idx) = (picked.index(0), picked.index(1));
    let train = pos
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != test_idx && i != val_idx)
        .map(|(_, &item)| item)
        .collect();
    EntitySplit {
        train,
        val: Some(pos[val_idx]),
        test: Some(pos[test_idx]),
    }
}

/// Leave-one-out split: one random positive to test, one to validation, the
/// rest to training. Deterministic in `seed`.
pub fn leave_one_out_split(ds: InteractionDataset, seed: u64) -> InteractionDataset {
    let per_task = |task: Task| {
        (0..ds.num_entities(task) as u32)
            .map(|id| split_entity(&ds, Entity { task, id }, seed))
            .collect::<Vec<_>>()
    };
    let splits = Splits {
        users: per_task(Task::User),
        groups: per_task(Task::Group),
    };
    ds.with_splits(splits)
}

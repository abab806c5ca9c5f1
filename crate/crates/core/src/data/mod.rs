//! Interaction data: entities, positive sets, splits, sampling, batching.

mod batch;
mod io;
mod sampling;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{make_batches, mask_count, AugmentedPair, BatchConfig, MarginSlice, TrainBatch};
pub use io::{load_dataset, save_dataset, GROUP_ITEM_FILE, GROUP_MEMBERS_FILE, STATS_FILE, USER_ITEM_FILE};
pub use sampling::sample_negatives;
pub use split::{leave_one_out_split, MIN_POSITIVES_FOR_EVAL};
pub use synth::{generate_synthetic, SynthConfig};

/// Which interaction type an entity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    User,
    Group,
}

impl Task {
    pub fn code(self) -> u64 {
        match self {
            Task::User => 0,
            Task::Group => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub task: Task,
    pub id: u32,
}

impl Entity {
    pub fn user(id: u32) -> Self {
        Self { task: Task::User, id }
    }

    pub fn group(id: u32) -> Self {
        Self {
            task: Task::Group,
            id,
        }
    }
}

/// Held-out assignment of one entity's positives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySplit {
    pub train: Vec<u32>,
    pub val: Option<u32>,
    pub test: Option<u32>,
}

impl EntitySplit {
    /// Entities with too few positives are trained on but never ranked.
    pub fn train_only(&self) -> bool {
        self.test.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub users: Vec<EntitySplit>,
    pub groups: Vec<EntitySplit>,
}

/// Users, items, groups and their implicit-feedback positive sets.
///
/// Positive sets and member lists are sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    num_groups: usize,
    group_members: Vec<Vec<u32>>,
    user_items: Vec<Vec<u32>>,
    group_items: Vec<Vec<u32>>,
    splits: Option<Splits>,
    user_ids: Vec<u32>,
}

fn normalize(mut v: Vec<u32>) -> Vec<u32> {
    v.sort_unstable();
    v.dedup();
    v
}

impl InteractionDataset {
    pub fn new(
        num_users: usize,
        num_items: usize,
        group_members: Vec<Vec<u32>>,
        user_items: Vec<Vec<u32>>,
        group_items: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let num_groups = group_members.len();
        if user_items.len() != num_users {
            return Err(Error::Data(format!(
                "{} user positive sets for {num_users} users",
                user_items.len()
            )));
        }
        if group_items.len() != num_groups {
            return Err(Error::Data(format!(
                "{} group positive sets for {num_groups} groups",
                group_items.len()
            )));
        }
        let group_members: Vec<_> = group_members.into_iter().map(normalize).collect();
        let user_items: Vec<_> = user_items.into_iter().map(normalize).collect();
        let group_items: Vec<_> = group_items.into_iter().map(normalize).collect();
        for (g, members) in group_members.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Data(format!("group {g} has no members")));
            }
            if let Some(&u) = members.iter().find(|&&u| u as usize >= num_users) {
                return Err(Error::Data(format!(
                    "group {g} member {u} out of range (num_users = {num_users})"
                )));
            }
        }
        for (kind, sets) in [("user", &user_items), ("group", &group_items)] {
            for (e, items) in sets.iter().enumerate() {
                if let Some(&i) = items.iter().find(|&&i| i as usize >= num_items) {
                    return Err(Error::Data(format!(
                        "{kind} {e} item {i} out of range (num_items = {num_items})"
                    )));
                }
            }
        }
        Ok(Self {
            num_users,
            num_items,
            num_groups,
            group_members,
            user_items,
            group_items,
            splits: None,
            user_ids: (0..num_users as u32).collect(),
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn num_entities(&self, task: Task) -> usize {
        match task {
            Task::User => self.num_users,
            Task::Group => self.num_groups,
        }
    }

    pub fn group_members(&self, group: u32) -> &[u32] {
        &self.group_members[group as usize]
    }

    pub fn all_group_members(&self) -> &[Vec<u32>] {
        &self.group_members
    }

    /// Members as seen by the encoder: a user is a group of one.
    pub fn members(&self, entity: Entity) -> &[u32] {
        match entity.task {
            Task::User => std::slice::from_ref(&self.user_ids[entity.id as usize]),
            Task::Group => self.group_members(entity.id),
        }
    }

    /// Full positive set (train, validation and test).
    pub fn positives(&self, entity: Entity) -> &[u32] {
        match entity.task {
            Task::User => &self.user_items[entity.id as usize],
            Task::Group => &self.group_items[entity.id as usize],
        }
    }

    pub fn is_positive(&self, entity: Entity, item: u32) -> bool {
        self.positives(entity).binary_search(&item).is_ok()
    }

    pub fn splits(&self) -> Option<&Splits> {
        self.splits.as_ref()
    }

    pub fn split(&self, entity: Entity) -> Option<&EntitySplit> {
        self.splits.as_ref().map(|s| match entity.task {
            Task::User => &s.users[entity.id as usize],
            Task::Group => &s.groups[entity.id as usize],
        })
    }

    pub(crate) fn with_splits(mut self, splits: Splits) -> Self {
        self.splits = Some(splits);
        self
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::compute(self)
    }
}

/// Dataset counts, always recomputed from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_groups: usize,
    pub num_user_item_interactions: usize,
    pub num_group_item_interactions: usize,
    pub avg_group_size: f64,
}

impl DatasetStats {
    pub fn compute(ds: &InteractionDataset) -> Self {
        let total_members: usize = ds.group_members.iter().map(Vec::len).sum();
        Self {
            num_users: ds.num_users,
            num_items: ds.num_items,
            num_groups: ds.num_groups,
            num_user_item_interactions: ds.user_items.iter().map(Vec::len).sum(),
            num_group_item_interactions: ds.group_items.iter().map(Vec::len).sum(),
            avg_group_size: if ds.num_groups == 0 {
                0.0
            } else {
                total_members as f64 / ds.num_groups as f64
            },
        }
    }
}

//! Planted-cluster synthetic interactions.
//!
//! Users and items are split into latent clusters. Each user and item also
//! has a small latent taste vector, and items have a skewed within-cluster
//! popularity. A user's positives are drawn (without replacement) with
//! weight `popularity · exp(strength · ⟨taste_u, taste_i⟩)`, scaled by
//! `cross_affinity` for items outside the user's cluster. Groups are drawn
//! mostly from one cluster; their positives use the members' mean taste
//! and the group's cluster, so group preferences are a member consensus.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_groups: usize,
    pub seed: u64,
    pub clusters: usize,
    pub mean_group_size: f64,
    pub max_group_size: usize,
    pub mean_user_items: f64,
    pub mean_group_items: f64,
    /// Weight multiplier for items outside the entity's cluster.
    pub cross_affinity: f64,
    /// Probability that a group slot is filled from any cluster.
    pub member_leak: f64,
    pub latent_dim: usize,
    pub taste_strength: f64,
    /// Exponent of the within-cluster popularity power law.
    pub popularity_skew: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 200,
            num_items: 300,
            num_groups: 80,
            seed: 7,
            clusters: 2,
            mean_group_size: 4.0,
            max_group_size: 12,
            mean_user_items: 15.0,
            mean_group_items: 10.0,
            cross_affinity: 0.02,
            member_leak: 0.1,
            latent_dim: 4,
            taste_strength: 1.5,
            popularity_skew: 0.5,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.clusters < 2 {
            return fail(format!("need at least 2 clusters, got {}", self.clusters));
        }
        if self.num_users < self.clusters || self.num_items < self.clusters {
            return fail("every cluster needs at least one user and one item".into());
        }
        if self.num_groups > 0 && self.num_users < 2 {
            return fail("groups need at least two users".into());
        }
        if !(self.mean_group_size >= 2.0) || self.max_group_size < 2 {
            return fail("group sizes must be at least 2".into());
        }
        if self.mean_group_size > self.max_group_size as f64 {
            return fail("mean group size exceeds the maximum".into());
        }
        if !(self.mean_user_items >= 3.0) || !(self.mean_group_items >= 3.0) {
            return fail("mean positives per entity must be at least 3".into());
        }
        if self.num_items / self.clusters < 3 {
            return fail("each cluster needs at least 3 items".into());
        }
        if !(0.0..=1.0).contains(&self.cross_affinity) || !(0.0..=1.0).contains(&self.member_leak)
        {
            return fail("cross_affinity and member_leak must lie in [0, 1]".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".into());
        }
        Ok(())
    }
}

/// `base + Poisson(mean - base)`, or `base` when the excess is zero.
fn shifted_poisson(rng: &mut Rng, base: usize, mean: f64) -> usize {
    let excess = mean - base as f64;
    if excess <= 0.0 {
        return base;
    }
    let draw: f64 = Poisson::new(excess)
        .expect("positive Poisson rate")
        .sample(rng);
    base + draw as usize
}

fn balanced_assignment(rng: &mut Rng, n: usize, clusters: usize) -> Vec<usize> {
    let mut a: Vec<usize> = (0..n).map(|i| i % clusters).collect();
    a.shuffle(rng);
    a
}

fn latent(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn weighted_draw(rng: &mut Rng, weights: &[f64], amount: usize) -> Vec<u32> {
    let candidates: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let amount = amount.min(candidates.len());
    let picked = index::sample_weighted(rng, candidates.len(), |i| weights[candidates[i]], amount)
        .expect("finite positive weights");
    let mut out: Vec<u32> = picked.into_iter().map(|i| candidates[i] as u32).collect();
    out.sort_unstable();
    out
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<InteractionDataset> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, rng::SYNTH, &[]);
    let c = cfg.clusters;

    let user_cluster = balanced_assignment(&mut r, cfg.num_users, c);
    let item_cluster = balanced_assignment(&mut r, cfg.num_items, c);
    let user_taste: Vec<Vec<f64>> = (0..cfg.num_users)
        .map(|_| latent(&mut r, cfg.latent_dim))
        .collect();
    let item_taste: Vec<Vec<f64>> = (0..cfg.num_items)
        .map(|_| latent(&mut r, cfg.latent_dim))
        .collect();

    // Power-law popularity by a random rank within each cluster.
    let mut popularity = vec![0.0; cfg.num_items];
    for k in 0..c {
        let mut members: Vec<usize> = (0..cfg.num_items).filter(|&i| item_cluster[i] == k).collect();
        members.shuffle(&mut r);
        for (rank, &i) in members.iter().enumerate() {
            popularity[i] = (rank as f64 + 1.0).powf(-cfg.popularity_skew);
        }
    }

    let scale = cfg.taste_strength / (cfg.latent_dim as f64).sqrt();
    let weights_for = |taste: &[f64], cluster: usize| -> Vec<f64> {
        (0..cfg.num_items)
            .map(|i| {
                let aff: f64 = taste.iter().zip(&item_taste[i]).map(|(a, b)| a * b).sum();
                let w = popularity[i] * (scale * aff).exp();
                if item_cluster[i] == cluster {
                    w
                } else {
                    w * cfg.cross_affinity
                }
            })
            .collect()
    };

    let user_items: Vec<Vec<u32>> = (0..cfg.num_users)
        .map(|u| {
            let n = shifted_poisson(&mut r, 3, cfg.mean_user_items);
            let w = weights_for(&user_taste[u], user_cluster[u]);
            weighted_draw(&mut r, &w, n)
        })
        .collect();

    let by_cluster: Vec<Vec<u32>> = (0..c)
        .map(|k| {
            (0..cfg.num_users as u32)
                .filter(|&u| user_cluster[u as usize] == k)
                .collect()
        })
        .collect();

    let mut group_members = Vec::with_capacity(cfg.num_groups);
    let mut group_items = Vec::with_capacity(cfg.num_groups);
    for _ in 0..cfg.num_groups {
        let k = r.random_range(0..c);
        let size = shifted_poisson(&mut r, 2, cfg.mean_group_size)
            .min(cfg.max_group_size)
            .min(cfg.num_users);
        let mut members: Vec<u32> = Vec::with_capacity(size);
        while members.len() < size {
            let pool = &by_cluster[k];
            let from_any = r.random_bool(cfg.member_leak)
                || pool.iter().all(|u| members.contains(u));
            let u = if from_any {
                r.random_range(0..cfg.num_users as u32)
            } else {
                pool[r.random_range(0..pool.len())]
            };
            if !members.contains(&u) {
                members.push(u);
            }
        }
        let mut consensus = vec![0.0; cfg.latent_dim];
        for &u in &members {
            for (m, t) in consensus.iter_mut().zip(&user_taste[u as usize]) {
                *m += t / size as f64;
            }
        }
        let n = shifted_poisson(&mut r, 3, cfg.mean_group_items);
        let w = weights_for(&consensus, k);
        group_items.push(weighted_draw(&mut r, &w, n));
        members.sort_unstable();
        group_members.push(members);
    }

    InteractionDataset::new(cfg.num_users, cfg.num_items, group_members, user_items, group_items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Entity;

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        for bad in [
            SynthConfig { clusters: 1, ..SynthConfig::default() },
            SynthConfig { num_items: 4, ..SynthConfig::default() },
            SynthConfig { mean_group_size: 1.5, ..SynthConfig::default() },
            SynthConfig { num_users: 1, clusters: 2, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn every_entity_has_enough_positives() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        for u in 0..ds.num_users() as u32 {
            assert!(ds.positives(Entity::user(u)).len() >= 3);
        }
        for g in 0..ds.num_groups() as u32 {
            assert!(ds.positives(Entity::group(g)).len() >= 3);
            assert!(ds.group_members(g).len() >= 2);
        }
    }
}

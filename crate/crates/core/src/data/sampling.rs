use rand::seq::index;
use rand::Rng as _;

use super::{Entity, InteractionDataset};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Draws `n_neg` distinct items uniformly from the catalog minus the
/// entity's full positive set.
pub fn sample_negatives(
    ds: &InteractionDataset,
    entity: Entity,
    n_neg: usize,
    rng: &mut Rng,
) -> Result<Vec<u32>> {
    let positives = ds.positives(entity);
    let n_items = ds.num_items();
    let available = n_items - positives.len();
    if n_neg > available {
        return Err(Error::Sampling(format!(
            "{n_neg} negatives requested for {:?} {} but only {available} non-positive items",
            entity.task, entity.id
        )));
    }
    // Rejection sampling is cheap while the excluded fraction stays small.
    if n_neg * 4 <= available && positives.len() * 2 <= n_items {
        let mut out: Vec<u32> = Vec::with_capacity(n_neg);
        while out.len() < n_neg {
            let item = rng.random_range(0..n_items as u32);
            if positives.binary_search(&item).is_err() && !out.contains(&item) {
                out.push(item);
            }
        }
        return Ok(out);
    }
    let candidates: Vec<u32> = (0..n_items as u32)
        .filter(|i| positives.binary_search(i).is_err())
        .collect();
    Ok(index::sample(rng, candidates.len(), n_neg)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ds() -> InteractionDataset {
        InteractionDataset::new(1, 5, vec![vec![0]], vec![vec![0, 1, 2, 3]], vec![vec![2]]).unwrap()
    }

    #[test]
    fn forced_outcome() {
        let mut r = rng::stream(0, rng::NEGATIVES, &[]);
        assert_eq!(sample_negatives(&ds(), Entity::user(0), 1, &mut r).unwrap(), vec![4]);
    }

    #[test]
    fn insufficient_candidates() {
        let mut r = rng::stream(0, rng::NEGATIVES, &[]);
        assert!(matches!(
            sample_negatives(&ds(), Entity::user(0), 2, &mut r),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn deterministic_and_distinct() {
        let ds = InteractionDataset::new(1, 50, vec![vec![0]], vec![vec![3, 7]], vec![vec![]])
            .unwrap();
        let draw = || {
            let mut r = rng::stream(5, rng::NEGATIVES, &[1]);
            sample_negatives(&ds, Entity::user(0), 10, &mut r).unwrap()
        };
        let a = draw();
        assert_eq!(a, draw());
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }
}

use c3rec::data::{
    generate_synthetic, leave_one_out_split, load_dataset, make_batches, mask_count, sample_negatives,
    save_dataset, BatchConfig, Entity, SynthConfig, Task,
};
use c3rec::eval::{evaluate, popularity_baseline, EvalConfig};
use c3rec::model::{load_checkpoint, C3Model, ModelConfig};
use c3rec::rng;
use proptest::prelude::*;

fn synth(users: usize, items: usize, groups: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        num_users: users,
        num_items: items,
        num_groups: groups,
        seed,
        ..SynthConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_a_partition(seed in 0u64..1000, split_seed in 0u64..1000) {
        let ds = generate_synthetic(&synth(30, 50, 12, seed)).unwrap();
        let split = leave_one_out_split(ds, split_seed);
        for task in [Task::User, Task::Group] {
            for id in 0..split.num_entities(task) as u32 {
                let e = Entity { task, id };
                let s = split.split(e).unwrap();
                let mut all = s.train.clone();
                all.extend(s.val);
                all.extend(s.test);
                let n = all.len();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), n, "overlap between parts");
                prop_assert_eq!(&all[..], split.positives(e));
                prop_assert_eq!(s.val.is_some(), s.test.is_some());
            }
        }
    }

    #[test]
    fn negatives_never_hit_positives(seed in 0u64..1000, n_neg in 1usize..40) {
        let ds = leave_one_out_split(generate_synthetic(&synth(20, 60, 8, seed)).unwrap(), seed);
        let mut r = rng::stream(seed, rng::NEGATIVES, &[]);
        for g in 0..ds.num_groups() as u32 {
            let e = Entity::group(g);
            let negs = sample_negatives(&ds, e, n_neg, &mut r).unwrap();
            let mut uniq = negs.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), n_neg);
            prop_assert!(negs.iter().all(|&i| !ds.is_positive(e, i)));
        }
    }

    #[test]
    fn batches_respect_group_sizes_and_views(seed in 0u64..200, ratio in 0.05f64..0.95, threshold in 2usize..6) {
        let ds = leave_one_out_split(generate_synthetic(&synth(40, 60, 16, seed)).unwrap(), seed);
        let cfg = BatchConfig { batch_size: 8, mask_ratio: ratio, aug_threshold: threshold, ..BatchConfig::default() };
        for b in make_batches(&ds, &cfg, seed, 1).unwrap() {
            for r in 0..b.rows() {
                let (_, mask) = b.member_row(r);
                let visible = mask.iter().filter(|&&m| m).count();
                let entity = Entity { task: b.task, id: b.entity_ids[r] };
                prop_assert_eq!(visible, ds.members(entity).len());
                prop_assert_eq!(b.labels[r], ds.is_positive(entity, b.item_ids[r]));
            }
            for pair in &b.aug_views {
                let size = ds.group_members(b.entity_ids[pair.row]).len();
                prop_assert!(size >= threshold);
                for v in 0..2 {
                    let kept = b.view_members(pair, v).len();
                    prop_assert!(kept >= 1);
                    prop_assert_eq!(size - kept, mask_count(size, ratio));
                }
            }
        }
    }
}

#[test]
fn dataset_files_round_trip() {
    let ds = generate_synthetic(&synth(25, 40, 10, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.stats(), ds.stats());
    for g in 0..ds.num_groups() as u32 {
        assert_eq!(back.group_members(g), ds.group_members(g));
        assert_eq!(back.positives(Entity::group(g)), ds.positives(Entity::group(g)));
    }
}

#[test]
fn checkpoint_file_round_trip_preserves_scores() {
    let ds = leave_one_out_split(generate_synthetic(&synth(25, 40, 10, 3)).unwrap(), 3);
    let model = C3Model::new(ModelConfig::new(25, 40, 8, 2, 2), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    c3rec::model::save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let cfg = EvalConfig { n_eval_neg: 10, ..EvalConfig::default() };
    assert_eq!(evaluate(&model, &ds, &cfg).unwrap(), evaluate(&back, &ds, &cfg).unwrap());
}

#[test]
fn random_model_ranks_near_uniform_expectation() {
    // 10 of 101 candidates make the top 10 for a scorer with no signal.
    let ds = leave_one_out_split(generate_synthetic(&synth(1000, 400, 20, 9)).unwrap(), 9);
    let model = C3Model::new(ModelConfig::new(1000, 400, 8, 1, 2), 2).unwrap();
    let r = evaluate(&model, &ds, &EvalConfig::default()).unwrap();
    assert!(r.user.n_evaluated >= 900);
    assert!((r.user.hr_10 - 10.0 / 101.0).abs() <= 0.03, "{}", r.user.hr_10);
}

#[test]
fn popularity_beats_uniform_on_planted_clusters() {
    let ds = leave_one_out_split(generate_synthetic(&SynthConfig::default()).unwrap(), 7);
    let r = evaluate(&popularity_baseline(&ds).unwrap(), &ds, &EvalConfig::default()).unwrap();
    assert!(r.group.hr_10 > 10.0 / 101.0 && r.user.hr_10 > 10.0 / 101.0);
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

#[test]
fn disjoint_clusters_keep_group_positives_in_cluster() {
    let cfg = SynthConfig { cross_affinity: 0.0, member_leak: 0.0, ..SynthConfig::default() };
    let ds = generate_synthetic(&cfg).unwrap();
    // Components of the user-item graph refine the planted clusters.
    let (m, n) = (ds.num_users(), ds.num_items());
    let mut parent: Vec<usize> = (0..m + n).collect();
    let mut liked = vec![false; n];
    for u in 0..m {
        for &i in ds.positives(Entity::user(u as u32)) {
            liked[i as usize] = true;
            let (a, b) = (find(&mut parent, u), find(&mut parent, m + i as usize));
            parent[a] = b;
        }
    }
    let roots: std::collections::BTreeSet<usize> = (0..m).map(|u| find(&mut parent, u)).collect();
    assert!(roots.len() >= 2, "clusters merged");
    for g in 0..ds.num_groups() as u32 {
        let members = ds.group_members(g);
        let root = find(&mut parent, members[0] as usize);
        assert!(members.iter().all(|&u| find(&mut parent, u as usize) == root));
        for &i in ds.positives(Entity::group(g)) {
            let item = m + i as usize;
            assert!(!liked[i as usize] || find(&mut parent, item) == root, "group {g} item {i}");
        }
    }
}

use super::*;
use crate::data::{generate_synthetic, leave_one_out_split, SynthConfig};

fn dataset(users: usize, items: usize, groups: usize) -> InteractionDataset {
    let cfg = SynthConfig {
        num_users: users,
        num_items: items,
        num_groups: groups,
        ..SynthConfig::default()
    };
    leave_one_out_split(generate_synthetic(&cfg).unwrap(), 7)
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        layers: 1,
        heads: 2,
        epochs: 2,
        batch_size: 16,
        lr: 1e-2,
        n_eval_neg: 20,
        ..TrainConfig::default()
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad_heads = TrainConfig { heads: 5, ..TrainConfig::default() };
    assert!(bad_heads.validate().is_err());
    let tiny_batch = TrainConfig { batch_size: 1, ..TrainConfig::default() };
    assert!(tiny_batch.validate().is_err());
    let ablated = TrainConfig { batch_size: 1, no_contrastive: true, ..TrainConfig::default() };
    assert!(ablated.validate().is_ok());
}

#[test]
fn ablation_switches_override_loss_weights() {
    let c = TrainConfig { no_margin: true, no_contrastive: true, ..TrainConfig::default() };
    let l = c.effective_loss();
    assert_eq!((l.alpha, l.beta), (1.0, 0.0));
    assert!(!c.batch_config().augment);
}

#[test]
fn config_json_is_flat_and_round_trips() {
    let c = TrainConfig::default();
    let v = serde_json::to_value(&c).unwrap();
    assert!(v.get("beta").is_some() && v.get("loss").is_none());
    let back: TrainConfig = serde_json::from_value(v).unwrap();
    assert_eq!(back, c);
    let partial: TrainConfig = serde_json::from_str(r#"{"dim": 16, "tau": 0.5}"#).unwrap();
    assert_eq!((partial.dim, partial.loss.tau, partial.layers), (16, 0.5, 3));
}

#[test]
fn loss_decreases_within_first_epoch() {
    let ds = dataset(200, 300, 80);
    let cfg = TrainConfig { batch_size: 32, lr: 3e-3, ..TrainConfig::default() };
    let mut t = Trainer::new(&ds, cfg).unwrap();
    let reports = t.train_epoch(&ds, 1).unwrap();
    let w = (reports.len() / 4).max(1);
    let avg = |r: &[LossReport]| r.iter().map(|x| x.l_total).sum::<f64>() / r.len() as f64;
    let first = avg(&reports[..w]);
    let last = avg(&reports[reports.len() - w..]);
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn no_contrastive_keeps_contrastive_term_zero() {
    let ds = dataset(40, 60, 20);
    let cfg = TrainConfig { no_contrastive: true, ..tiny_config() };
    let mut t = Trainer::new(&ds, cfg).unwrap();
    let reports = t.train_epoch(&ds, 1).unwrap();
    assert!(reports.iter().all(|r| r.l_cont == 0.0 && r.n_pairs == 0));
    let mut t = Trainer::new(&ds, tiny_config()).unwrap();
    let reports = t.train_epoch(&ds, 1).unwrap();
    assert!(reports.iter().any(|r| r.l_cont > 0.0));
}

#[test]
fn seeded_training_is_bit_identical() {
    let ds = dataset(40, 60, 20);
    let a = train(&ds, &tiny_config()).unwrap();
    let b = train(&ds, &TrainConfig { execution: Execution::Sequential, ..tiny_config() }).unwrap();
    assert_eq!(a.log.without_timing(), b.log.without_timing());
    assert_eq!(a.last.flat_params(), b.last.flat_params());
    assert_eq!(a.best.flat_params(), b.best.flat_params());
}

#[test]
fn padding_row_stays_zero() {
    let ds = dataset(40, 60, 20);
    let out = train(&ds, &tiny_config()).unwrap();
    let pad = out.last.config().pad_id();
    assert!(out.last.embedding(pad).iter().all(|&x| x == 0.0));
}

#[test]
fn log_bookkeeping() {
    let ds = dataset(40, 60, 20);
    let cfg = TrainConfig { epochs: 6, patience: 2, ..tiny_config() };
    let out = train(&ds, &cfg).unwrap();
    let log = &out.log;
    assert_eq!(log.epochs[0].epoch, 1);
    assert!(log.epochs[0].best);
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for e in &log.epochs {
        let cur = (e.val_group_hr10, e.val_group_ndcg10);
        assert_eq!(e.best, cur > best);
        if e.best {
            best = cur;
        }
    }
    assert_eq!((log.best_val_group_hr10, log.best_val_group_ndcg10), best);
    assert!(log.epochs.iter().any(|e| e.epoch == log.best_epoch && e.best));
    let dir = tempfile::tempdir().unwrap();
    out.write_to(dir.path()).unwrap();
    for f in ["best.ckpt", "last.ckpt", "log.jsonl", "best.ckpt.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let lines = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), log.epochs.len());
}

#[test]
fn unsplit_dataset_is_rejected() {
    let ds = generate_synthetic(&SynthConfig { num_users: 30, num_items: 40, num_groups: 10, ..SynthConfig::default() }).unwrap();
    assert!(matches!(train(&ds, &tiny_config()), Err(Error::Data(_))));
}

#[test]
fn grid_shapes_and_selection() {
    let ds = dataset(40, 60, 20);
    let base = tiny_config();
    assert_eq!(Grid::default().len(), 64);
    let single = Grid { aug_thresholds: vec![3], mask_ratios: vec![0.4], betas: vec![0.05] };
    let r = hyper_grid(&ds, &base, &single).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.best, single.points(&base)[0]);
    let empty = Grid { betas: vec![], ..single };
    assert!(hyper_grid(&ds, &base, &empty).is_err());
}

#[test]
fn grid_avoids_sabotaged_config() {
    let ds = dataset(200, 300, 80);
    let good = TrainConfig { dim: 16, layers: 1, epochs: 4, lr: 5e-3, ..TrainConfig::default() };
    let sabotaged = TrainConfig { lr: 0.0, ..good.clone() };
    for configs in [vec![sabotaged.clone(), good.clone()], vec![good.clone(), sabotaged.clone()]] {
        let r = grid_search(&ds, &configs, Execution::Parallel).unwrap();
        assert_eq!(r.best.lr, good.lr, "{}", r.to_table());
        assert_eq!(r.rows.len(), 2);
    }
}

//! Acceptance gate. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.
//!
//! The learning-signal, ablation and robustness criteria train full models
//! on the 200-user synthetic set; trained runs are shared between them.

use std::collections::BTreeMap;
use std::time::Instant;

use c3rec::data::{
    generate_synthetic, leave_one_out_split, make_batches, BatchConfig, Entity, InteractionDataset,
    SynthConfig, Task,
};
use c3rec::eval::{
    consensus_drift, evaluate, full_catalog_negatives, hr_at_k, ndcg_at_k, popularity_baseline,
    rank_entity, DriftConfig, DriftReport, EvalConfig, EvalReport, Scorer,
};
use c3rec::loss::{info_nce, margin_loss, negative_loss, positive_loss};
use c3rec::model::{encode_checkpoint, C3Model, ModelConfig};
use c3rec::numcore::grad_check;
use c3rec::rng;
use c3rec::train::{batch_loss, batch_objective, train, DropoutKey, TrainConfig};
use c3rec::Execution;
use rand::seq::SliceRandom;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Dataset seed of the learning-signal set.
const DATA_SEED: u64 = 7;
const TREND_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn learning_set(split_seed: u64) -> InteractionDataset {
    let cfg = SynthConfig {
        num_users: 200,
        num_items: 300,
        num_groups: 80,
        seed: DATA_SEED,
        ..SynthConfig::default()
    };
    leave_one_out_split(generate_synthetic(&cfg).expect("synthetic set"), split_seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Variant {
    Full,
    NoContrastive,
    NoMargin,
}

impl Variant {
    fn config(self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            execution: Execution::Sequential,
            no_contrastive: self == Variant::NoContrastive,
            no_margin: self == Variant::NoMargin,
            ..TrainConfig::default()
        }
    }
}

struct Run {
    test: EvalReport,
    drift: DriftReport,
    epochs: usize,
    seconds: f64,
}

/// Trained runs keyed by (variant, seed), filled on demand.
#[derive(Default)]
struct Runs(BTreeMap<(Variant, u64), Run>);

impl Runs {
    fn get(&mut self, variant: Variant, seed: u64) -> &Run {
        self.0.entry((variant, seed)).or_insert_with(|| {
            let ds = learning_set(seed);
            let cfg = variant.config(seed);
            let start = Instant::now();
            let out = train(&ds, &cfg).expect("training");
            let eval_cfg = EvalConfig {
                seed,
                execution: Execution::Sequential,
                ..EvalConfig::default()
            };
            let test = evaluate(&out.best, &ds, &eval_cfg).expect("evaluation");
            let seconds = start.elapsed().as_secs_f64();
            let drift_cfg = DriftConfig {
                mask_ratio: 0.8,
                seed,
                execution: Execution::Sequential,
                ..DriftConfig::default()
            };
            let drift = consensus_drift(&out.best, &ds, &drift_cfg).expect("drift");
            println!(
                "    trained {variant:?} seed {seed}: {} epochs, {seconds:.1}s, group HR@10 {:.4} NDCG@10 {:.4}, drift cosine {:.4}",
                out.log.epochs.len(),
                test.group.hr_10,
                test.group.ndcg_10,
                drift.mean_cosine
            );
            Run {
                test,
                drift,
                epochs: out.log.epochs.len(),
                seconds,
            }
        })
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20u64 {
        let ds = leave_one_out_split(
            generate_synthetic(&SynthConfig {
                num_users: 30,
                num_items: 40,
                num_groups: 16,
                seed,
                ..SynthConfig::default()
            })
            .expect("synthetic set"),
            seed,
        );
        let bc = BatchConfig {
            batch_size: 2,
            neg_per_pos: 1,
            mask_ratio: 0.4,
            aug_threshold: 3,
            task_mix: 0.0,
            augment: true,
        };
        let batch = make_batches(&ds, &bc, seed, 1)
            .expect("batches")
            .into_iter()
            .find(|b| b.task == Task::Group && b.aug_views.len() == 2)
            .expect("a group batch with two augmented examples");
        let tc = TrainConfig { seed, ..TrainConfig::default() };
        let model = C3Model::new(tc.model_config(&ds), seed).expect("model");
        let loss = tc.effective_loss();
        let key = Some(DropoutKey { seed, epoch: 1, batch: 0 });
        let (_, grads) = batch_objective(&model, &batch, &loss, key, Execution::Sequential).expect("objective");
        let analytic = grads.flatten(model.config());

        // Every touched embedding coordinate, the head, and 16 random
        // coordinates of every encoder tensor.
        let d = model.config().dim;
        let mut coords = Vec::new();
        let item_base = model.user_emb.len();
        for &u in grads.user_rows.keys() {
            coords.extend(u as usize * d..(u as usize + 1) * d);
        }
        for &i in grads.item_rows.keys() {
            coords.extend(item_base + i as usize * d..item_base + (i as usize + 1) * d);
        }
        let mut r = rng::stream(seed, "gradcheck", &[]);
        let mut offset = 0;
        let names = model.param_names();
        for (t, name) in model.params().iter().zip(&names) {
            if name.starts_with("layer") {
                for _ in 0..16 {
                    coords.push(offset + r.random_range(0..t.len()));
                }
            } else if name.starts_with("head") {
                coords.extend(offset..offset + t.len());
            }
            offset += t.len();
        }
        coords.sort_unstable();
        coords.dedup();
        checked += coords.len();

        let mut probe = model.clone();
        let mut params = model.flat_params();
        let report = grad_check(&mut params, &analytic, &coords, |p| {
            probe.set_flat_params(p).expect("param count");
            batch_loss(&probe, &batch, &loss, key, Execution::Sequential)
                .expect("objective")
                .l_total
        })
        .expect("finite objective");
        worst = worst.max(report.max_rel_err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 30.0,
        format!("max rel-err {worst:.2e} over {checked} coordinates, 20 seeds, {secs:.1}s"),
    )
}

fn random_model(seed: u64) -> C3Model {
    C3Model::new(ModelConfig::new(50, 60, 32, 3, 4), seed).expect("model")
}

fn permutation_invariance() -> Outcome {
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let model = random_model(draw);
        let mut r = rng::stream(draw, "permutation", &[]);
        let size = r.random_range(2..=10);
        let mut members: Vec<u32> = rand::seq::index::sample(&mut r, 50, size)
            .into_iter()
            .map(|u| u as u32)
            .collect();
        let item = r.random_range(0..60);
        let base = model.score(&members, item).expect("score");
        members.shuffle(&mut r);
        let permuted = model.score(&members, item).expect("score");
        worst = worst.max((base - permuted).abs());
    }
    outcome(worst <= 1e-12, format!("max |Δs| {worst:.2e} over 100 draws"))
}

fn mask_soundness() -> Outcome {
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let mut model = random_model(draw);
        let mut r = rng::stream(draw, "mask", &[]);
        let size = r.random_range(2..=10);
        let members: Vec<u32> = rand::seq::index::sample(&mut r, 50, size)
            .into_iter()
            .map(|u| u as u32)
            .collect();
        let mut mask = vec![true; size];
        let hidden = r.random_range(1..size);
        for i in rand::seq::index::sample(&mut r, size, hidden) {
            mask[i] = false;
        }
        let item = r.random_range(0..60);
        let before = model.forward(&members, &mask, item, None).expect("forward");
        let rep_before = model.member_representation(&before);
        let d = model.config().dim;
        for (u, _) in members.iter().zip(&mask).filter(|(_, &m)| !m) {
            let row = *u as usize * d..(*u as usize + 1) * d;
            for v in &mut model.user_emb.data_mut()[row] {
                *v += r.random_range(-5.0..5.0);
            }
        }
        let after = model.forward(&members, &mask, item, None).expect("forward");
        let rep_after = model.member_representation(&after);
        let mut diff = (before.score - after.score).abs();
        for (a, b) in rep_before.iter().zip(&rep_after) {
            diff = diff.max((a - b).abs());
        }
        for j in (0..before.tokens()).filter(|&j| before.token_mask[j]) {
            for (a, b) in before.token_state(j).iter().zip(after.token_state(j)) {
                diff = diff.max((a - b).abs());
            }
        }
        worst = worst.max(diff);
    }
    outcome(worst <= 1e-12, format!("max output change {worst:.2e} over 100 draws"))
}

fn loss_closed_forms() -> Outcome {
    // The closed form ln 2 is the stabilizer-free value; with the default
    // ε = 1e-8 the loss is −ln(0.5 + ε), about 2e-8 below it.
    let l_pos = positive_loss(&[0.5], 0.0).unwrap();
    let l_pos_eps = positive_loss(&[0.5], 1e-8).unwrap();
    let mut errs = vec![
        (l_pos - 2f64.ln()).abs() / 1e-10,
        (l_pos_eps + (0.5f64 + 1e-8).ln()).abs() / 1e-12,
        (negative_loss(&[1.0]).unwrap() - (std::f64::consts::E - 1.0)).abs() / 1e-10,
        (margin_loss(&[0.9], &[0.2], 1.0).unwrap() - 0.3).abs() / 1e-12,
    ];
    let v = vec![0.4, -1.3, 0.7, 2.2];
    for tau in [0.5, 1.0, 2.0] {
        let (l, _) = info_nce(&vec![v.clone(); 4], tau).unwrap();
        errs.push((l - 3f64.ln()).abs() / 1e-10);
    }
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1.0,
        format!(
            "worst error / tolerance {worst:.3}; L_pos(0.5) = {l_pos:.12} (ε = 1e-8: {l_pos_eps:.12}), L_neg(1) error {:.1e}, margin error {:.1e}",
            errs[2] * 1e-10,
            errs[3] * 1e-12
        ),
    )
}

fn brute_force_ndcg(rank: usize, len: usize, k: usize) -> f64 {
    let mut dcg = 0.0;
    for pos in 1..=len.min(k) {
        let rel = if pos == rank { 1.0 } else { 0.0 };
        dcg += rel / ((pos + 1) as f64).log2();
    }
    let idcg = 1.0 / 2f64.log2();
    dcg / idcg
}

struct TableScorer(Vec<f64>);

impl Scorer for TableScorer {
    fn score_items(&self, _: &InteractionDataset, e: Entity, items: &[u32]) -> c3rec::Result<Vec<f64>> {
        Ok(items
            .iter()
            .map(|&i| self.0[(e.id as usize * 7 + i as usize * 13) % self.0.len()])
            .collect())
    }
}

fn metric_oracle(runs: &mut Runs) -> Outcome {
    let mut r = rng::stream(5, "metrics", &[]);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = r.random_range(1..=101);
        let rank = r.random_range(1..=len);
        let k = r.random_range(1..=20);
        if ndcg_at_k(&[rank], k).unwrap() != brute_force_ndcg(rank, len, k) {
            mismatches += 1;
        }
    }
    let mut monotone = true;
    let mut check = |rep: &EvalReport| {
        for m in [&rep.user, &rep.group] {
            monotone &= m.hr_1 <= m.hr_5 && m.hr_5 <= m.hr_10;
        }
    };
    let ds = learning_set(1);
    let pop = popularity_baseline(&ds).unwrap();
    check(&evaluate(&pop, &ds, &EvalConfig::default()).unwrap());
    check(&runs.get(Variant::Full, 1).test);
    let mut rank_list = Vec::new();
    for _ in 0..200 {
        rank_list.push(r.random_range(1..=101));
    }
    let hrs: Vec<f64> = (1..=101).map(|k| hr_at_k(&rank_list, k).unwrap()).collect();
    monotone &= hrs.windows(2).all(|w| w[0] <= w[1]);

    // Full-catalog ranking on a 30-item catalog, with coarse scores so
    // that id tie-breaks matter.
    let tiny = leave_one_out_split(
        generate_synthetic(&SynthConfig {
            num_users: 12,
            num_items: 30,
            num_groups: 6,
            mean_user_items: 5.0,
            mean_group_items: 5.0,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap(),
        3,
    );
    let scorer = TableScorer((0..17).map(|i| f64::from(i % 5)).collect());
    let mut rank_mismatch = 0;
    let mut compared = 0;
    for task in [Task::User, Task::Group] {
        for id in 0..tiny.num_entities(task) as u32 {
            let e = Entity { task, id };
            let Some(target) = tiny.split(e).and_then(|s| s.test) else { continue };
            let fast = rank_entity(&scorer, &tiny, e, target, full_catalog_negatives(&tiny, e), 9).unwrap();
            let mut cands: Vec<u32> = (0..30).filter(|&i| i == target || !tiny.is_positive(e, i)).collect();
            let scores = scorer.score_items(&tiny, e, &cands).unwrap();
            let mut order: Vec<usize> = (0..cands.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(cands[a].cmp(&cands[b])));
            cands = order.iter().map(|&k| cands[k]).collect();
            let exhaustive = cands.iter().position(|&i| i == target).unwrap() + 1;
            compared += 1;
            if fast != exhaustive {
                rank_mismatch += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && monotone && rank_mismatch == 0 && compared > 0,
        format!(
            "NDCG mismatches {mismatches}/1000; HR monotone {monotone}; full-catalog rank mismatches {rank_mismatch}/{compared}"
        ),
    )
}

fn learning_signal(runs: &mut Runs) -> Outcome {
    let ds = learning_set(DATA_SEED);
    let pop = popularity_baseline(&ds).unwrap();
    let eval_cfg = EvalConfig { seed: DATA_SEED, execution: Execution::Sequential, ..EvalConfig::default() };
    let pop_hr = evaluate(&pop, &ds, &eval_cfg).unwrap().group.hr_10;
    let run = runs.get(Variant::Full, DATA_SEED);
    let hr = run.test.group.hr_10;
    let uniform = 10.0 / 101.0;
    outcome(
        hr >= 1.5 * pop_hr && hr >= 3.0 * uniform && run.seconds < 300.0,
        format!(
            "group HR@10 {hr:.4} vs popularity {pop_hr:.4} (needs ≥ {:.4}) and uniform {uniform:.4} (needs ≥ {:.4}); {} epochs in {:.1}s",
            1.5 * pop_hr,
            3.0 * uniform,
            run.epochs,
            run.seconds
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation_ordering(runs: &mut Runs) -> Outcome {
    let mut per = BTreeMap::new();
    for v in [Variant::Full, Variant::NoContrastive, Variant::NoMargin] {
        let scores: Vec<f64> = TREND_SEEDS.iter().map(|&s| runs.get(v, s).test.group.ndcg_10).collect();
        per.insert(v, scores);
    }
    let (full, cont, marg) = (&per[&Variant::Full], &per[&Variant::NoContrastive], &per[&Variant::NoMargin]);
    for (i, s) in TREND_SEEDS.iter().enumerate() {
        if !(full[i] >= cont[i] && cont[i] >= marg[i]) {
            println!(
                "    note: seed {s} violates the ordering (full {:.4}, w/o contrastive {:.4}, w/o margin {:.4})",
                full[i], cont[i], marg[i]
            );
        }
    }
    let (f, c, m) = (mean(full), mean(cont), mean(marg));
    outcome(
        f >= c && c >= m && f - m >= 0.02,
        format!("mean group NDCG@10 over 5 seeds: full {f:.4}, w/o contrastive {c:.4}, w/o margin {m:.4} (full − w/o margin {:+.4})", f - m),
    )
}

fn consensus_robustness(runs: &mut Runs) -> Outcome {
    let with: Vec<f64> = TREND_SEEDS.iter().map(|&s| runs.get(Variant::Full, s).drift.mean_cosine).collect();
    let without: Vec<f64> = TREND_SEEDS
        .iter()
        .map(|&s| runs.get(Variant::NoContrastive, s).drift.mean_cosine)
        .collect();
    let (a, b) = (mean(&with), mean(&without));
    outcome(
        a - b >= 0.05,
        format!("mean drift cosine at mask 0.8: β>0 {a:.4}, β=0 {b:.4} (difference {:+.4})", a - b),
    )
}

fn determinism() -> Outcome {
    let ds = leave_one_out_split(
        generate_synthetic(&SynthConfig { num_users: 60, num_items: 80, num_groups: 24, ..SynthConfig::default() })
            .unwrap(),
        11,
    );
    let cfg = TrainConfig { dim: 16, layers: 2, epochs: 3, seed: 11, n_eval_neg: 50, ..TrainConfig::default() };
    let artifacts = |exec: Execution| {
        let cfg = TrainConfig { execution: exec, ..cfg.clone() };
        let out = train(&ds, &cfg).unwrap();
        let eval = evaluate(&out.best, &ds, &EvalConfig { seed: 11, n_eval_neg: 50, execution: exec, ..EvalConfig::default() }).unwrap();
        let drift = consensus_drift(&out.best, &ds, &DriftConfig { seed: 11, n_eval_neg: 50, execution: exec, ..DriftConfig::default() }).unwrap();
        (
            encode_checkpoint(&out.best),
            encode_checkpoint(&out.last),
            out.log.without_timing().to_jsonl().unwrap(),
            serde_json::to_string(&eval).unwrap(),
            serde_json::to_string(&drift).unwrap(),
        )
    };
    let a = artifacts(Execution::Parallel);
    let b = artifacts(Execution::Parallel);
    let c = artifacts(Execution::Sequential);
    outcome(
        a == b && a == c,
        format!(
            "repeat run identical: {}; sequential vs parallel identical: {} (checkpoints {} bytes)",
            a == b,
            a == c,
            a.0.len()
        ),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // Positional numbers select criteria, e.g. `-- 1 9`; default is all.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.parse::<u32>().is_ok()).collect();
    let mut runs = Runs::default();
    type Criterion<'a> = (&'a str, Box<dyn FnMut(&mut Runs) -> Outcome>);
    let criteria: Vec<Criterion> = vec![
        ("1 gradient correctness", Box::new(|_| gradient_check())),
        ("2 permutation invariance", Box::new(|_| permutation_invariance())),
        ("3 mask soundness", Box::new(|_| mask_soundness())),
        ("4 loss closed forms", Box::new(|_| loss_closed_forms())),
        ("5 metric oracle", Box::new(metric_oracle)),
        ("6 learning signal", Box::new(learning_signal)),
        ("7 ablation ordering", Box::new(ablation_ordering)),
        ("8 consensus robustness", Box::new(consensus_robustness)),
        ("9 determinism", Box::new(|_| determinism())),
    ];
    let mut failed = Vec::new();
    for (name, mut check) in criteria {
        if !only.is_empty() && !only.iter().any(|n| name.split(' ').next() == Some(n.as_str())) {
            continue;
        }
        let o = check(&mut runs);
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}

//! Training loop: batched forward passes, loss gradients, a deterministic
//! chunked backward pass, Adam, and early stopping on group validation
//! HR@10.

mod grid;

pub use grid::{grid_search, hyper_grid, Grid, GridResult, GridRow};

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, BatchConfig, InteractionDataset, Task, TrainBatch};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, Target};
use crate::exec::{map_range, Execution};
use crate::loss::{batch_main_loss, info_nce, total_loss, LossConfig, LossReport, ScoreSlice};
use crate::model::{save_checkpoint, C3Model, ForwardTrace, Grads, ModelConfig};
use crate::numcore::{adam_step, AdamConfig, AdamState};
use crate::rng;

/// Examples per backward chunk. Fixed so that the gradient summation order,
/// and hence every bit of the result, is independent of the thread count.
const BACKWARD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub neg_per_pos: usize,
    pub patience: usize,
    /// Share of user-task batches; 0.5 alternates the two tasks 1:1.
    pub task_mix: f64,
    pub no_margin: bool,
    pub no_contrastive: bool,
    pub n_eval_neg: usize,
    pub contrastive_pool_includes_item: bool,
    pub execution: Execution,
    #[serde(flatten)]
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 3,
            heads: 4,
            dropout: 0.2,
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            neg_per_pos: 4,
            patience: 10,
            task_mix: 0.5,
            no_margin: false,
            no_contrastive: false,
            n_eval_neg: 100,
            contrastive_pool_includes_item: false,
            execution: Execution::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.loss.validate()?;
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad("dim must be a positive multiple of heads");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.contrastive_enabled() && self.batch_size < 2 {
            return bad("batch_size must be at least 2 when the contrastive term is on");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.task_mix) {
            return bad("task_mix must lie in [0, 1]");
        }
        if self.neg_per_pos == 0 {
            return bad("neg_per_pos must be positive");
        }
        if self.n_eval_neg == 0 {
            return bad("n_eval_neg must be positive");
        }
        Ok(())
    }

    pub fn contrastive_enabled(&self) -> bool {
        !self.no_contrastive && self.loss.beta > 0.0
    }

    /// Loss settings after the ablation switches: `no_margin` forces α = 1
    /// and `no_contrastive` forces β = 0.
    pub fn effective_loss(&self) -> LossConfig {
        let mut l = self.loss.clone();
        if self.no_margin {
            l.alpha = 1.0;
        }
        if self.no_contrastive {
            l.beta = 0.0;
        }
        l
    }

    pub fn model_config(&self, ds: &InteractionDataset) -> ModelConfig {
        let mut m = ModelConfig::new(ds.num_users(), ds.num_items(), self.dim, self.layers, self.heads);
        m.dropout = self.dropout;
        m.contrastive_pool_includes_item = self.contrastive_pool_includes_item;
        m
    }

    pub fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            batch_size: self.batch_size,
            neg_per_pos: self.neg_per_pos,
            mask_ratio: self.loss.mask_ratio,
            aug_threshold: self.loss.aug_threshold,
            task_mix: self.task_mix,
            augment: self.contrastive_enabled(),
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }

    fn validation(&self) -> EvalConfig {
        EvalConfig {
            n_eval_neg: self.n_eval_neg,
            seed: self.seed,
            target: Target::Validation,
            execution: self.execution,
            include_users: true,
        }
    }
}

/// Identifies the dropout streams of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

struct Unit {
    members: Vec<u32>,
    item: u32,
}

fn batch_units(batch: &TrainBatch, with_views: bool) -> Vec<Unit> {
    let mut units: Vec<Unit> = (0..batch.rows())
        .map(|r| Unit { members: batch.active_members(r), item: batch.item_ids[r] })
        .collect();
    if with_views {
        for pair in &batch.aug_views {
            for v in 0..2 {
                units.push(Unit {
                    members: batch.view_members(pair, v),
                    item: batch.item_ids[pair.row],
                });
            }
        }
    }
    units
}

fn dump_batch(batch: &TrainBatch, traces: &[ForwardTrace]) -> String {
    let scores: Vec<f64> = traces.iter().take(batch.rows()).map(|t| t.score).collect();
    format!(
        "task={:?} entities={:?} items={:?} labels={:?} scores={:?}",
        batch.task, batch.entity_ids, batch.item_ids, batch.labels, scores
    )
}

/// Forward pass over every unit of a batch plus the loss and its gradient
/// w.r.t. each unit's score and pooled representation.
struct BatchForward {
    units: Vec<Unit>,
    traces: Vec<ForwardTrace>,
    report: LossReport,
    d_score: Vec<f64>,
    d_rep: Vec<Option<Vec<f64>>>,
}

fn batch_forward(
    model: &C3Model,
    batch: &TrainBatch,
    loss: &LossConfig,
    dropout: Option<DropoutKey>,
    exec: Execution,
) -> Result<BatchForward> {
    let with_views = batch.task == Task::Group && loss.beta > 0.0 && batch.aug_views.len() >= 2;
    let units = batch_units(batch, with_views);
    let traces = map_range(exec, units.len(), |k| {
        let u = &units[k];
        let mask = vec![true; u.members.len()];
        match dropout {
            Some(key) => {
                let mut r = rng::stream(key.seed, rng::DROPOUT, &[key.epoch, key.batch, k as u64]);
                model.forward(&u.members, &mask, u.item, Some(&mut r))
            }
            None => model.forward(&u.members, &mask, u.item, None),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rows = batch.rows();
    let slices: Vec<ScoreSlice> = batch
        .slices
        .iter()
        .map(|s| ScoreSlice {
            pos: traces[s.positive].score,
            neg: s.negatives.clone().map(|r| traces[r].score).collect(),
        })
        .collect();
    let main = batch_main_loss(&slices, loss)?;
    let mut d_score = vec![0.0; rows];
    for (s, (dp, dn)) in batch.slices.iter().zip(main.d_pos.iter().zip(&main.d_neg)) {
        d_score[s.positive] += dp;
        for (r, g) in s.negatives.clone().zip(dn) {
            d_score[r] += g;
        }
    }

    let mut l_cont = 0.0;
    let mut d_rep: Vec<Option<Vec<f64>>> = vec![None; units.len()];
    if with_views {
        let reps: Vec<Vec<f64>> = traces[rows..].iter().map(|t| model.member_representation(t)).collect();
        let (l, grads) = info_nce(&reps, loss.tau)?;
        l_cont = l;
        for (k, g) in grads.into_iter().enumerate() {
            d_rep[rows + k] = Some(g.into_iter().map(|x| loss.beta * x).collect());
        }
    }
    let report = LossReport {
        l_pos: main.l_pos,
        l_neg: main.l_neg,
        l_margin: main.l_margin,
        l_main: main.l_main,
        l_cont,
        l_total: total_loss(main.l_main, l_cont, loss.beta),
        n_pos: slices.len(),
        n_neg: main.n_pairs,
        n_pairs: if with_views { batch.aug_views.len() } else { 0 },
    };
    if !report.l_total.is_finite() {
        return Err(Error::NonFinite {
            context: format!("loss {:?}; batch {}", report, dump_batch(batch, &traces)),
        });
    }
    Ok(BatchForward { units, traces, report, d_score, d_rep })
}

/// Total loss of one batch, without the backward pass.
pub fn batch_loss(
    model: &C3Model,
    batch: &TrainBatch,
    loss: &LossConfig,
    dropout: Option<DropoutKey>,
    exec: Execution,
) -> Result<LossReport> {
    Ok(batch_forward(model, batch, loss, dropout, exec)?.report)
}

/// Total loss of one batch and its gradient w.r.t. every parameter.
///
/// With `dropout` set, each example draws its dropout masks from its own
/// stream, so the objective is a deterministic function of the parameters.
pub fn batch_objective(
    model: &C3Model,
    batch: &TrainBatch,
    loss: &LossConfig,
    dropout: Option<DropoutKey>,
    exec: Execution,
) -> Result<(LossReport, Grads)> {
    let BatchForward { units, traces, report, d_score, d_rep } =
        batch_forward(model, batch, loss, dropout, exec)?;
    let rows = batch.rows();
    let n_chunks = units.len().div_ceil(BACKWARD_CHUNK);
    let partial = map_range(exec, n_chunks, |c| -> Result<Grads> {
        let mut g = Grads::zeros(model.config());
        let end = ((c + 1) * BACKWARD_CHUNK).min(units.len());
        for k in c * BACKWARD_CHUNK..end {
            let ds = if k < rows { d_score[k] } else { 0.0 };
            let dr = d_rep[k].as_deref();
            if ds == 0.0 && dr.is_none() {
                continue;
            }
            model.backward(&traces[k], &units[k].members, units[k].item, ds, dr, &mut g)?;
        }
        Ok(g)
    });
    let mut grads = Grads::zeros(model.config());
    for g in partial {
        grads.add(&g?);
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: format!("gradient; batch {}", dump_batch(batch, &traces)),
        });
    }
    Ok((report, grads))
}

/// One model with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: C3Model,
    pub config: TrainConfig,
    loss: LossConfig,
    adam: Vec<AdamState>,
}

impl Trainer {
    pub fn new(ds: &InteractionDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = C3Model::new(config.model_config(ds), config.seed)?;
        let adam = model
            .params()
            .iter()
            .map(|p| AdamState::for_param(p, config.adam()))
            .collect();
        Ok(Self {
            model,
            loss: config.effective_loss(),
            config,
            adam,
        })
    }

    /// Forward, backward and one Adam update on a batch.
    pub fn step(&mut self, batch: &TrainBatch, epoch: u64, index: u64) -> Result<LossReport> {
        let key = DropoutKey { seed: self.config.seed, epoch, batch: index };
        let (report, grads) = batch_objective(&self.model, batch, &self.loss, Some(key), self.config.execution)?;
        grads.store_into(&mut self.model);
        for (p, s) in self.model.params_mut().into_iter().zip(&mut self.adam) {
            adam_step(p, s)?;
        }
        if !self.model.is_finite() {
            return Err(Error::NonFinite {
                context: format!("parameters after epoch {epoch} batch {index}"),
            });
        }
        Ok(report)
    }

    /// Trains one epoch (numbered from 1) and returns each batch's report.
    pub fn train_epoch(&mut self, ds: &InteractionDataset, epoch: u64) -> Result<Vec<LossReport>> {
        let batches = make_batches(ds, &self.config.batch_config(), self.config.seed, epoch)?;
        batches
            .iter()
            .enumerate()
            .map(|(i, b)| self.step(b, epoch, i as u64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    pub loss: LossReport,
    pub val_user_hr10: f64,
    pub val_user_ndcg10: f64,
    pub val_group_hr10: f64,
    pub val_group_ndcg10: f64,
    /// True when this epoch became the best so far.
    pub best: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_group_hr10: f64,
    pub best_val_group_ndcg10: f64,
    pub stopped_early: bool,
    pub wall_seconds: f64,
}

impl TrainLog {
    /// Copy with all wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> TrainLog {
        let mut l = self.clone();
        l.wall_seconds = 0.0;
        l.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        l
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out += &serde_json::to_string(e)?;
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: C3Model,
    pub last: C3Model,
    pub log: TrainLog,
    pub config: TrainConfig,
}

impl TrainOutcome {
    /// Writes `best.ckpt`, `last.ckpt` (with JSON sidecars) and `log.jsonl`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&self.best, dir.join("best.ckpt"))?;
        save_checkpoint(&self.last, dir.join("last.ckpt"))?;
        let path = dir.join("log.jsonl");
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.log.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

/// Trains until the epoch cap or until group validation HR@10 (ties broken
/// by NDCG@10) has not improved for `patience` epochs. Returns the best and
/// the last model.
pub fn train(ds: &InteractionDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if ds.splits().is_none() {
        return Err(Error::Data("training requires a split dataset".into()));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(ds, cfg.clone())?;
    let val_cfg = cfg.validation();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, f64, usize, C3Model)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let reports = trainer.train_epoch(ds, epoch as u64)?;
        let val = evaluate(&trainer.model, ds, &val_cfg)?;
        let (hr, ndcg) = (val.group.hr_10, val.group.ndcg_10);
        let improved = match &best {
            None => true,
            Some((bh, bn, _, _)) => hr > *bh || (hr == *bh && ndcg > *bn),
        };
        if improved {
            best = Some((hr, ndcg, epoch, trainer.model.clone()));
        }
        let loss = LossReport::mean(&reports);
        log::info!(
            "epoch {epoch}: l_total {:.5} l_cont {:.5} val group HR@10 {hr:.4} NDCG@10 {ndcg:.4}{}",
            loss.l_total,
            loss.l_cont,
            if improved { " *" } else { "" }
        );
        epochs.push(EpochRecord {
            epoch,
            batches: reports.len(),
            loss,
            val_user_hr10: val.user.hr_10,
            val_user_ndcg10: val.user.ndcg_10,
            val_group_hr10: hr,
            val_group_ndcg10: ndcg,
            best: improved,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        let best_epoch = best.as_ref().map_or(0, |b| b.2);
        if epoch - best_epoch >= cfg.patience && epoch < cfg.epochs {
            stopped_early = true;
            break;
        }
    }
    let (best_hr, best_ndcg, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_model,
        last: trainer.model,
        log: TrainLog {
            epochs,
            best_epoch,
            best_val_group_hr10: best_hr,
            best_val_group_ndcg10: best_ndcg,
            stopped_early,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests;

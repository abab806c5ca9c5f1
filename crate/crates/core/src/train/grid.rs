use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};

/// Cartesian grid over augmentation threshold, mask ratio and β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub aug_thresholds: Vec<usize>,
    pub mask_ratios: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            aug_thresholds: vec![3, 5, 7, 9],
            mask_ratios: vec![0.2, 0.4, 0.6, 0.8],
            betas: vec![0.025, 0.05, 0.075, 0.1],
        }
    }
}

impl Grid {
    pub fn len(&self) -> usize {
        self.aug_thresholds.len() * self.mask_ratios.len() * self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One config per grid point, threshold-major.
    pub fn points(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &t in &self.aug_thresholds {
            for &r in &self.mask_ratios {
                for &b in &self.betas {
                    let mut c = base.clone();
                    c.loss.aug_threshold = t;
                    c.loss.mask_ratio = r;
                    c.loss.beta = b;
                    out.push(c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub index: usize,
    pub aug_threshold: usize,
    pub mask_ratio: f64,
    pub beta: f64,
    pub lr: f64,
    pub best_epoch: usize,
    pub val_group_hr10: f64,
    pub val_group_ndcg10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best: TrainConfig,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>4} {:>9} {:>10} {:>7} {:>8} {:>10} {:>8} {:>9}\n",
            "#", "threshold", "mask_ratio", "beta", "lr", "best_epoch", "HR@10", "NDCG@10"
        );
        for r in &self.rows {
            out += &format!(
                "{:>4} {:>9} {:>10} {:>7} {:>8} {:>10} {:>8.4} {:>9.4}{}\n",
                r.index,
                r.aug_threshold,
                r.mask_ratio,
                r.beta,
                r.lr,
                r.best_epoch,
                r.val_group_hr10,
                r.val_group_ndcg10,
                if r.index == self.best_index { "  <- best" } else { "" }
            );
        }
        out
    }
}

/// Trains every config and selects the one with the highest group
/// validation HR@10 (NDCG@10 breaks ties, then the earlier config).
pub fn grid_search(ds: &InteractionDataset, configs: &[TrainConfig], exec: Execution) -> Result<GridResult> {
    if configs.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    let outcomes = map_slice(exec, configs, |c| train(ds, c).map(|o| o.log));
    let mut rows = Vec::with_capacity(configs.len());
    for (index, (c, log)) in configs.iter().zip(outcomes).enumerate() {
        let log = log?;
        rows.push(GridRow {
            index,
            aug_threshold: c.loss.aug_threshold,
            mask_ratio: c.loss.mask_ratio,
            beta: c.loss.beta,
            lr: c.lr,
            best_epoch: log.best_epoch,
            val_group_hr10: log.best_val_group_hr10,
            val_group_ndcg10: log.best_val_group_ndcg10,
        });
    }
    let best_index = rows
        .iter()
        .fold(0, |b, r| {
            let cur = &rows[b];
            if r.val_group_hr10 > cur.val_group_hr10
                || (r.val_group_hr10 == cur.val_group_hr10 && r.val_group_ndcg10 > cur.val_group_ndcg10)
            {
                r.index
            } else {
                b
            }
        });
    Ok(GridResult {
        best_index,
        best: configs[best_index].clone(),
        rows,
    })
}

pub fn hyper_grid(ds: &InteractionDataset, base: &TrainConfig, grid: &Grid) -> Result<GridResult> {
    grid_search(ds, &grid.points(base), base.execution)
}

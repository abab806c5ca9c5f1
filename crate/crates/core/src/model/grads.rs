use std::collections::BTreeMap;

use super::{C3Model, ModelConfig, LAYER_PARAMS};

/// Gradient accumulator for one model. Embedding gradients are kept per
/// touched row; everything else is dense.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    dim: usize,
    pub user_rows: BTreeMap<u32, Vec<f64>>,
    pub item_rows: BTreeMap<u32, Vec<f64>>,
    pub layers: Vec<[Vec<f64>; LAYER_PARAMS]>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl Grads {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.dim, cfg.ff_dim);
        let sizes = [d * d, d * d, d * d, d * d, d * f, f, f * d, d, d, d, d, d];
        Self {
            dim: d,
            user_rows: BTreeMap::new(),
            item_rows: BTreeMap::new(),
            layers: (0..cfg.layers)
                .map(|_| sizes.map(|n| vec![0.0; n]))
                .collect(),
            head_w: vec![0.0; d],
            head_b: 0.0,
        }
    }

    pub(crate) fn user_row(&mut self, u: u32) -> &mut [f64] {
        let d = self.dim;
        self.user_rows.entry(u).or_insert_with(|| vec![0.0; d])
    }

    pub(crate) fn item_row(&mut self, i: u32) -> &mut [f64] {
        let d = self.dim;
        self.item_rows.entry(i).or_insert_with(|| vec![0.0; d])
    }

    /// `self += other`.
    pub fn add(&mut self, other: &Grads) {
        fn add_rows(dst: &mut BTreeMap<u32, Vec<f64>>, src: &BTreeMap<u32, Vec<f64>>) {
            for (k, v) in src {
                match dst.get_mut(k) {
                    Some(row) => row.iter_mut().zip(v).for_each(|(a, b)| *a += b),
                    None => {
                        dst.insert(*k, v.clone());
                    }
                }
            }
        }
        add_rows(&mut self.user_rows, &other.user_rows);
        add_rows(&mut self.item_rows, &other.item_rows);
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
            }
        }
        self.head_w.iter_mut().zip(&other.head_w).for_each(|(a, b)| *a += b);
        self.head_b += other.head_b;
    }

    pub fn is_finite(&self) -> bool {
        self.user_rows.values().flatten().all(|v| v.is_finite())
            && self.item_rows.values().flatten().all(|v| v.is_finite())
            && self.layers.iter().flatten().flatten().all(|v| v.is_finite())
            && self.head_w.iter().all(|v| v.is_finite())
            && self.head_b.is_finite()
    }

    /// Dense gradient in [`C3Model::params`] order.
    pub fn flatten(&self, cfg: &ModelConfig) -> Vec<f64> {
        let d = self.dim;
        let mut users = vec![0.0; (cfg.num_users + 1) * d];
        for (&u, row) in &self.user_rows {
            users[u as usize * d..(u as usize + 1) * d].copy_from_slice(row);
        }
        let mut items = vec![0.0; cfg.num_items * d];
        for (&i, row) in &self.item_rows {
            items[i as usize * d..(i as usize + 1) * d].copy_from_slice(row);
        }
        let mut out = users;
        out.extend(items);
        for l in &self.layers {
            for p in l {
                out.extend_from_slice(p);
            }
        }
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    /// Writes this accumulator into the model's dense gradient buffers,
    /// replacing their previous contents.
    pub fn store_into(&self, model: &mut C3Model) {
        let flat = self.flatten(model.config());
        let mut offset = 0;
        for t in model.params_mut() {
            let n = t.len();
            t.grad_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

//! The encoder scorer.
//!
//! An example is a token set: the embeddings of the (unmasked) group
//! members followed by the candidate item's embedding. No positional
//! encodings are added, so the score is invariant to member order. A stack
//! of post-LN Transformer encoder layers mixes the tokens, the final states
//! of the member and item tokens are mean-pooled, and a linear head with a
//! sigmoid yields the interaction probability. A user is scored as a group
//! of one through the same path.

mod checkpoint;
mod encoder;
mod grads;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::ForwardTrace;
pub use grads::Grads;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Include the item token when pooling the member representation used
    /// by the contrastive objective.
    pub contrastive_pool_includes_item: bool,
}

impl ModelConfig {
    pub fn new(num_users: usize, num_items: usize, dim: usize, layers: usize, heads: usize) -> Self {
        Self {
            num_users,
            num_items,
            dim,
            layers,
            heads,
            ff_dim: 4 * dim,
            dropout: 0.2,
            contrastive_pool_includes_item: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ff_dim == 0 {
            return Err(Error::Config("ff_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.num_items == 0 {
            return Err(Error::Config("model needs at least one item".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Row of the user table reserved for padding.
    pub fn pad_id(&self) -> u32 {
        self.num_users as u32
    }
}

/// One post-LN encoder layer. Per-head projections are stored side by side:
/// columns `a·dk .. (a+1)·dk` of `wq`/`wk`/`wv` belong to head `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

pub(crate) const LAYER_PARAMS: usize = 12;
const LAYER_PARAM_NAMES: [&str; LAYER_PARAMS] = [
    "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2", "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
];

impl EncoderLayer {
    fn init(cfg: &ModelConfig, r: &mut rng::Rng) -> Self {
        let (d, f) = (cfg.dim, cfg.ff_dim);
        let mut u = |shape: Vec<usize>| uniform(r, shape, d);
        Self {
            wq: u(vec![d, d]),
            wk: u(vec![d, d]),
            wv: u(vec![d, d]),
            wo: u(vec![d, d]),
            w1: u(vec![d, f]),
            b1: Tensor::zeros(vec![f]),
            w2: u(vec![f, d]),
            b2: Tensor::zeros(vec![d]),
            ln1_gain: Tensor::filled(vec![d], 1.0),
            ln1_bias: Tensor::zeros(vec![d]),
            ln2_gain: Tensor::filled(vec![d], 1.0),
            ln2_bias: Tensor::zeros(vec![d]),
        }
    }

    fn params(&self) -> [&Tensor; LAYER_PARAMS] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    fn params_mut(&mut self) -> [&mut Tensor; LAYER_PARAMS] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// Uniform(−1/√d, 1/√d) initialization.
fn uniform(r: &mut rng::Rng, shape: Vec<usize>, d: usize) -> Tensor {
    let bound = 1.0 / (d as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

#[derive(Debug, Clone, PartialEq)]
pub struct C3Model {
    config: ModelConfig,
    /// `(num_users + 1) × d`; the last row is the padding embedding.
    pub user_emb: Tensor,
    pub item_emb: Tensor,
    pub layers: Vec<EncoderLayer>,
    /// `d × 1`.
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl C3Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, rng::INIT, &[]);
        let d = config.dim;
        let mut user_emb = uniform(&mut r, vec![config.num_users + 1, d], d);
        let pad = config.num_users * d;
        user_emb.data_mut()[pad..].fill(0.0);
        let item_emb = uniform(&mut r, vec![config.num_items, d], d);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::init(&config, &mut r))
            .collect();
        let head_w = uniform(&mut r, vec![d, 1], d);
        Ok(Self {
            config,
            user_emb,
            item_emb,
            layers,
            head_w,
            head_b: Tensor::zeros(vec![1]),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All parameter tensors in a fixed order: user table, item table, each
    /// layer's twelve tensors, head weight, head bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.user_emb, &self.item_emb];
        for l in &self.layers {
            out.extend(l.params());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.user_emb, &mut self.item_emb];
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["user_emb".to_string(), "item_emb".to_string()];
        for l in 0..self.layers.len() {
            out.extend(LAYER_PARAM_NAMES.iter().map(|n| format!("layers.{l}.{n}")));
        }
        out.push("head_w".into());
        out.push("head_b".into());
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Concatenation of all parameter values in [`Self::params`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(
                "set_flat_params",
                format!("{} values for {} parameters", flat.len(), self.num_params()),
            ));
        }
        let mut offset = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    pub fn embedding(&self, user: u32) -> &[f64] {
        self.user_emb.row(user as usize)
    }
}

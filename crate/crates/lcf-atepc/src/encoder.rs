//! Trainable token encoders: token + position embeddings followed by stacked
//! multi-head self-attention layers.
//!
//! Attention here is the scaled-dot variant with a tanh applied to the
//! projected head concatenation. Each stacked layer adds a residual
//! connection around the attention output; a bare tanh-attention stack does
//! not train. Padding positions are excluded from every softmax support via
//! an additive mask of large negative scores.

use rand::Rng;

use crate::numerics::{Graph, Matrix, NodeId, ParameterStore, INIT_RANGE};

/// Additive score for masked-out attention keys. Large enough that the
/// masked probability underflows to exactly zero in f64.
const MASK_SCORE: f64 = -1e30;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        assert!(
            self.heads > 0 && self.d_hidden % self.heads == 0,
            "d_hidden {} must be divisible by head count {}",
            self.d_hidden,
            self.heads
        );
        self.d_hidden / self.heads
    }

    pub fn validate(&self) {
        let _ = self.head_dim();
        assert!(self.d_hidden > 0, "d_hidden must be positive");
        assert!(self.vocab_size > 0, "vocab_size must be positive");
        assert!(self.max_seq_len > 0, "max_seq_len must be positive");
    }
}

/// n x n additive attention mask: column `j` carries `MASK_SCORE` when
/// position `j` is padding, so no position can attend to it.
pub fn attention_mask(valid: &[bool]) -> Matrix {
    let n = valid.len();
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        if !valid[j] {
            for i in 0..n {
                *m.at_mut(i, j) = MASK_SCORE;
            }
        }
    }
    m
}

/// Scaled-dot attention for one head: `softmax(Q Kᵀ / sqrt(d_k) + mask) V`.
pub fn sda(
    g: &mut Graph,
    x: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    mask: &Matrix,
) -> NodeId {
    let d_k = g.value(wk).cols();
    let q = g.matmul(x, wq);
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    let kt = g.transpose(k);
    let raw = g.matmul(q, kt);
    let scaled = g.scale(raw, 1.0 / (d_k as f64).sqrt());
    let masked = g.add_const(scaled, mask);
    let attn = g.softmax_rows(masked);
    g.matmul(attn, v)
}

/// One multi-head self-attention encoder with its own projection weights.
#[derive(Clone, Debug)]
pub struct MhsaBlock {
    prefix: String,
    d_hidden: usize,
    heads: usize,
}

impl MhsaBlock {
    pub fn new(prefix: impl Into<String>, d_hidden: usize, heads: usize) -> Self {
        assert!(heads > 0 && d_hidden % heads == 0, "d_hidden must be divisible by heads");
        Self { prefix: prefix.into(), d_hidden, heads }
    }

    fn head_dim(&self) -> usize {
        self.d_hidden / self.heads
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) {
        let d_k = self.head_dim();
        for h in 0..self.heads {
            for w in ["wq", "wk", "wv"] {
                store.add(
                    &format!("{}.h{h}.{w}", self.prefix),
                    Matrix::uniform(self.d_hidden, d_k, -INIT_RANGE, INIT_RANGE, rng),
                );
            }
        }
        store.add(
            &format!("{}.w_mh", self.prefix),
            Matrix::uniform(self.heads * d_k, self.d_hidden, -INIT_RANGE, INIT_RANGE, rng),
        );
    }

    /// `tanh(concat(H_1 .. H_h) . W)`, every head its own projections.
    pub fn mhsa(&self, g: &mut Graph, store: &ParameterStore, x: NodeId, mask: &Matrix) -> NodeId {
        assert_eq!(g.value(x).cols(), self.d_hidden, "input width mismatch in {}", self.prefix);
        let mut concat: Option<NodeId> = None;
        for h in 0..self.heads {
            let wq = g.param(store, &format!("{}.h{h}.wq", self.prefix));
            let wk = g.param(store, &format!("{}.h{h}.wk", self.prefix));
            let wv = g.param(store, &format!("{}.h{h}.wv", self.prefix));
            let head = sda(g, x, wq, wk, wv, mask);
            concat = Some(match concat {
                None => head,
                Some(acc) => g.concat_cols(acc, head),
            });
        }
        let w_mh = g.param(store, &format!("{}.w_mh", self.prefix));
        let projected = g.matmul(concat.expect("at least one head"), w_mh);
        g.tanh(projected)
    }

    /// Residual encoder step: `x + mhsa(x)`.
    pub fn encode(&self, g: &mut Graph, store: &ParameterStore, x: NodeId, mask: &Matrix) -> NodeId {
        let attended = self.mhsa(g, store, x, mask);
        g.add(x, attended)
    }
}

/// Embedding plus `layers` stacked residual MHSA blocks. The local and
/// global instances share the architecture but never the parameters.
#[derive(Clone, Debug)]
pub struct TokenEncoder {
    prefix: String,
    cfg: EncoderConfig,
    blocks: Vec<MhsaBlock>,
}

impl TokenEncoder {
    pub fn new(prefix: impl Into<String>, cfg: EncoderConfig) -> Self {
        cfg.validate();
        let prefix = prefix.into();
        let blocks = (0..cfg.layers)
            .map(|i| MhsaBlock::new(format!("{prefix}.layer{i}"), cfg.d_hidden, cfg.heads))
            .collect();
        Self { prefix, cfg, blocks }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) {
        store.add(
            &format!("{}.tok_emb", self.prefix),
            Matrix::uniform(self.cfg.vocab_size, self.cfg.d_hidden, -INIT_RANGE, INIT_RANGE, rng),
        );
        store.add(
            &format!("{}.pos_emb", self.prefix),
            Matrix::uniform(self.cfg.max_seq_len, self.cfg.d_hidden, -INIT_RANGE, INIT_RANGE, rng),
        );
        for block in &self.blocks {
            block.init(store, rng);
        }
    }

    /// Token embedding plus learned absolute position embedding.
    pub fn embed(&self, g: &mut Graph, store: &ParameterStore, ids: &[usize]) -> NodeId {
        assert_eq!(ids.len(), self.cfg.max_seq_len, "instance must be padded to max_seq_len");
        for &id in ids {
            assert!(id < self.cfg.vocab_size, "token id {id} out of range {}", self.cfg.vocab_size);
        }
        let table = g.param(store, &format!("{}.tok_emb", self.prefix));
        let tok = g.gather_rows(table, ids);
        let pos = g.param(store, &format!("{}.pos_emb", self.prefix));
        g.add(tok, pos)
    }

    pub fn encode(&self, g: &mut Graph, store: &ParameterStore, ids: &[usize], mask: &Matrix) -> NodeId {
        let mut x = self.embed(g, store, ids);
        for block in &self.blocks {
            x = block.encode(g, store, x, mask);
        }
        x
    }
}

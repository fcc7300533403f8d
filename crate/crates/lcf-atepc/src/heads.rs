//! Model assembly: the local-context-focus branch (CDM / CDW / fusion),
//! feature interactive learning, the polarity classifier head, and the
//! token-level extraction head.
//!
//! The aspect extractor reads the re-encoded global branch only, so its
//! predictions do not depend on which aspect an instance targets. The
//! polarity classifier reads the first position of the fused local+global
//! features.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AteTag, TrainingInstance, ATE_CLASSES};
use crate::encoder::{attention_mask, EncoderConfig, MhsaBlock, TokenEncoder};
use crate::lcf::{cdm_matrix, cdw_matrix, effective_srd};
use crate::numerics::{Graph, Matrix, NodeId, ParameterStore, INIT_RANGE};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LcfMode {
    Cdm,
    Cdw,
    Fusion,
}

impl fmt::Display for LcfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LcfMode::Cdm => "cdm",
            LcfMode::Cdw => "cdw",
            LcfMode::Fusion => "fusion",
        })
    }
}

impl FromStr for LcfMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cdm" => Ok(LcfMode::Cdm),
            "cdw" => Ok(LcfMode::Cdw),
            "fusion" => Ok(LcfMode::Fusion),
            other => Err(format!("unknown lcf mode {other:?} (expected cdm, cdw or fusion)")),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub lcf_mode: LcfMode,
    pub srd_alpha: i64,
    pub polarity_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) {
        self.encoder.validate();
        assert!(self.srd_alpha >= 0, "srd_alpha must be non-negative");
        assert!(self.polarity_classes >= 2, "need at least two polarity classes");
    }
}

/// Node handles produced by one forward pass.
pub struct ForwardPass {
    /// 1 x C polarity logits.
    pub apc_logits: NodeId,
    /// n x 3 token-class logits over the padded sequence.
    pub ate_logits: NodeId,
    /// Local branch output after re-encoding, n x d_h.
    pub local_feats: NodeId,
    /// Focused local features before re-encoding: masked or decayed rows
    /// (CDM / CDW), or the fused dense projection (fusion mode).
    pub focused_local: NodeId,
}

/// Softmax distributions and decoded tags for one instance.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// Polarity distribution, length C.
    pub apc_dist: Vec<f64>,
    /// Argmax token tags over the sentence body, in sentence coordinates.
    pub ate_tags: Vec<AteTag>,
}

pub struct LcfAtepcModel {
    cfg: ModelConfig,
    enc_local: TokenEncoder,
    enc_global: TokenEncoder,
    cdm_block: MhsaBlock,
    cdw_block: MhsaBlock,
    fusion_block: MhsaBlock,
    global_block: MhsaBlock,
    fil_block: MhsaBlock,
}

impl LcfAtepcModel {
    pub fn new(cfg: ModelConfig) -> Self {
        cfg.validate();
        let d = cfg.encoder.d_hidden;
        let h = cfg.encoder.heads;
        Self {
            cfg,
            enc_local: TokenEncoder::new("enc_l", cfg.encoder),
            enc_global: TokenEncoder::new("enc_g", cfg.encoder),
            cdm_block: MhsaBlock::new("lcf.cdm_enc", d, h),
            cdw_block: MhsaBlock::new("lcf.cdw_enc", d, h),
            fusion_block: MhsaBlock::new("lcf.fusion_enc", d, h),
            global_block: MhsaBlock::new("gcfg.enc", d, h),
            fil_block: MhsaBlock::new("fil.enc", d, h),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Fresh parameters for this configuration. The draw order is fixed so
    /// that CDM and CDW variants built from the same seed share identical
    /// values for every parameter they have in common.
    pub fn init_params(&self, seed: u64) -> ParameterStore {
        let mut store = ParameterStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.cfg.encoder.d_hidden;

        self.enc_local.init(&mut store, &mut rng);
        self.enc_global.init(&mut store, &mut rng);
        match self.cfg.lcf_mode {
            LcfMode::Cdm => self.cdm_block.init(&mut store, &mut rng),
            LcfMode::Cdw => self.cdw_block.init(&mut store, &mut rng),
            LcfMode::Fusion => {
                store.add("lcf.fuse_w", Matrix::uniform(2 * d, d, -INIT_RANGE, INIT_RANGE, &mut rng));
                store.add_zeros("lcf.fuse_b", 1, d);
                self.fusion_block.init(&mut store, &mut rng);
            }
        }
        self.global_block.init(&mut store, &mut rng);
        store.add("fil.w", Matrix::uniform(2 * d, d, -INIT_RANGE, INIT_RANGE, &mut rng));
        store.add_zeros("fil.b", 1, d);
        self.fil_block.init(&mut store, &mut rng);
        store.add("apc.w", Matrix::uniform(d, self.cfg.polarity_classes, -INIT_RANGE, INIT_RANGE, &mut rng));
        store.add_zeros("apc.b", 1, self.cfg.polarity_classes);
        store.add("ate.w", Matrix::uniform(d, ATE_CLASSES, -INIT_RANGE, INIT_RANGE, &mut rng));
        store.add_zeros("ate.b", 1, ATE_CLASSES);
        store
    }

    fn linear(&self, g: &mut Graph, store: &ParameterStore, x: NodeId, w: &str, b: &str) -> NodeId {
        let w = g.param(store, w);
        let b = g.param(store, b);
        let xw = g.matmul(x, w);
        g.add_bias(xw, b)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, inst: &TrainingInstance) -> ForwardPass {
        assert_eq!(
            inst.seq_len(),
            self.cfg.encoder.max_seq_len,
            "instance length does not match the encoder configuration"
        );
        let mask = attention_mask(&inst.attention_valid);
        let d = self.cfg.encoder.d_hidden;
        let alpha = self.cfg.srd_alpha;

        let local_ctx = self.enc_local.encode(g, store, &inst.input_ids, &mask);
        let global_ctx = self.enc_global.encode(g, store, &inst.input_ids, &mask);

        let srd = effective_srd(&inst.srd, alpha, inst.pair_suffix_start(), inst.valid_len);
        let n = srd.len();

        let (focused_local, local_feats) = match self.cfg.lcf_mode {
            LcfMode::Cdm => {
                let fm = cdm_matrix(&srd, alpha, d);
                let focused = g.hadamard_rows(local_ctx, fm.into_matrix());
                (focused, self.cdm_block.encode(g, store, focused, &mask))
            }
            LcfMode::Cdw => {
                let fm = cdw_matrix(&srd, alpha, n, d);
                let focused = g.hadamard_rows(local_ctx, fm.into_matrix());
                (focused, self.cdw_block.encode(g, store, focused, &mask))
            }
            LcfMode::Fusion => {
                let masked = cdm_matrix(&srd, alpha, d);
                let weighted = cdw_matrix(&srd, alpha, n, d);
                let a = g.hadamard_rows(local_ctx, masked.into_matrix());
                let b = g.hadamard_rows(local_ctx, weighted.into_matrix());
                let cat = g.concat_cols(a, b);
                let fused = self.linear(g, store, cat, "lcf.fuse_w", "lcf.fuse_b");
                (fused, self.fusion_block.encode(g, store, fused, &mask))
            }
        };

        let global_feats = self.global_block.encode(g, store, global_ctx, &mask);

        let cat = g.concat_cols(local_feats, global_feats);
        let dense = self.linear(g, store, cat, "fil.w", "fil.b");
        let interacted = self.fil_block.encode(g, store, dense, &mask);

        let pooled = g.take_row(interacted, 0);
        let apc_logits = self.linear(g, store, pooled, "apc.w", "apc.b");
        let ate_logits = self.linear(g, store, global_feats, "ate.w", "ate.b");

        ForwardPass { apc_logits, ate_logits, local_feats, focused_local }
    }

    /// Inference on a single instance in a throwaway graph.
    pub fn predict(&self, store: &ParameterStore, inst: &TrainingInstance) -> Prediction {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, store, inst);
        let apc = apc_classify(&mut g, fwd.apc_logits);
        let ate = ate_classify(&mut g, fwd.ate_logits);

        let apc_dist = g.value(apc).row(0).to_vec();
        let ate_tags = (1..=inst.body_len)
            .map(|p| AteTag::from_id(argmax(g.value(ate).row(p)) as i64).expect("three token classes"))
            .collect();
        Prediction { apc_dist, ate_tags }
    }
}

/// Polarity distribution from the pooled logits.
pub fn apc_classify(g: &mut Graph, apc_logits: NodeId) -> NodeId {
    g.softmax_rows(apc_logits)
}

/// Per-position token-class distributions; padding rows are excluded
/// downstream through the ignore-index targets.
pub fn ate_classify(g: &mut Graph, ate_logits: NodeId) -> NodeId {
    g.softmax_rows(ate_logits)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Maximal `B (I)*` chunks from per-position tags, as `(start, end)` ranges.
/// An `I` with no open chunk is repaired to a `B`.
pub fn decode_iob(tags: &[AteTag]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            AteTag::BeginAspect => {
                if let Some(start) = open.take() {
                    spans.push((start, i));
                }
                open = Some(i);
            }
            AteTag::InsideAspect => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            AteTag::Outside => {
                if let Some(start) = open.take() {
                    spans.push((start, i));
                }
            }
        }
    }
    if let Some(start) = open {
        spans.push((start, tags.len()));
    }
    spans
}

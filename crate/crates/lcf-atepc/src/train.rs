//! Joint and single-task optimization: loss assembly, AdamW with decoupled
//! weight decay, the epoch loop, and per-epoch checkpointing.
//!
//! L2 regularization defaults to the optimizer's decoupled weight-decay
//! path. Setting `l2_literal` instead adds the `lambda * sum(theta^2)` term
//! to both task losses as written; note that the joint total then counts it
//! twice, and that single-task runs pick up regularization gradients on the
//! idle head.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledSentence, Layout, TrainingInstance, Vocabulary, IGNORE_INDEX};
use crate::heads::{LcfAtepcModel, LcfMode};
use crate::numerics::{CheckpointError, Graph, Matrix, NodeId, ParameterStore};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Atepc,
    #[serde(rename = "ate")]
    AteOnly,
    #[serde(rename = "apc")]
    ApcOnly,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::Atepc => "atepc",
            TaskMode::AteOnly => "ate",
            TaskMode::ApcOnly => "apc",
        })
    }
}

impl FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "atepc" => Ok(TaskMode::Atepc),
            "ate" => Ok(TaskMode::AteOnly),
            "apc" => Ok(TaskMode::ApcOnly),
            other => Err(format!("unknown task mode {other:?} (expected atepc, ate or apc)")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_seq_len: usize,
    pub srd_alpha: i64,
    pub l2_lambda: f64,
    pub l2_literal: bool,
    pub task_mode: TaskMode,
    pub lcf_mode: LcfMode,
    pub layout: Layout,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive");
        }
        if self.srd_alpha < 0 {
            return fail("srd_alpha must be non-negative");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return fail("l2_lambda must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite gradient in {name:?} at step {step}")]
    NonFiniteGradient { name: String, step: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("dev evaluation failed: {0}")]
    DevEval(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_apc: f64,
    pub l_ate: f64,
    pub l_total: f64,
    /// Regularization value added into the task losses; zero when L2 runs
    /// through the optimizer's decoupled decay instead.
    pub l2_term: f64,
}

/// Combine task losses: the joint total is the plain sum, single-task modes
/// keep only their own term.
pub fn joint_loss(l_apc: f64, l_ate: f64, l2_term: f64, task_mode: TaskMode) -> LossBreakdown {
    let l_total = match task_mode {
        TaskMode::Atepc => l_apc + l_ate,
        TaskMode::AteOnly => l_ate,
        TaskMode::ApcOnly => l_apc,
    };
    LossBreakdown { l_apc, l_ate, l_total, l2_term }
}

#[derive(Copy, Clone, Debug)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

/// Training log CSV, one row per optimizer step.
pub fn write_train_log(path: &Path, log: &[StepRecord]) -> std::io::Result<()> {
    let mut out = String::from("epoch,step,l_apc,l_ate,l_total\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.step, r.loss.l_apc, r.loss.l_ate, r.loss.l_total
        ));
    }
    std::fs::write(path, out)
}

/// AdamW: bias-corrected moment estimates plus weight decay applied
/// directly to the weights, scaled by the learning rate.
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step_count: u64,
    first_moment: HashMap<String, Matrix>,
    second_moment: HashMap<String, Matrix>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step_count: 0,
            first_moment: HashMap::new(),
            second_moment: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(
        &mut self,
        store: &mut ParameterStore,
        grads: &[(String, Matrix)],
    ) -> Result<(), TrainError> {
        for (name, grad) in grads {
            if !grad.all_finite() {
                return Err(TrainError::NonFiniteGradient {
                    name: name.clone(),
                    step: self.step_count as usize + 1,
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);

        for (name, grad) in grads {
            let (rows, cols) = grad.shape();
            let m = self.first_moment.entry(name.clone()).or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.second_moment.entry(name.clone()).or_insert_with(|| Matrix::zeros(rows, cols));
            let theta = store.get_mut(name);
            assert_eq!(theta.shape(), grad.shape(), "gradient shape mismatch for {name}");

            let decay = 1.0 - self.learning_rate * self.weight_decay;
            for i in 0..theta.len() {
                let g = grad.data()[i];
                let mv = &mut m.data_mut()[i];
                let vv = &mut v.data_mut()[i];
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                let theta_i = &mut theta.data_mut()[i];
                *theta_i *= decay;
                *theta_i -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Loss nodes for one batch. The batch means are global over non-ignored
/// rows, so multi-aspect sentences weigh in once per targeted aspect.
pub struct BatchLoss {
    pub total: NodeId,
    pub l_apc: NodeId,
    pub l_ate: NodeId,
    pub breakdown: LossBreakdown,
}

pub fn batch_loss(
    g: &mut Graph,
    model: &LcfAtepcModel,
    store: &ParameterStore,
    batch: &[&TrainingInstance],
    task_mode: TaskMode,
    l2_lambda: f64,
    l2_literal: bool,
) -> BatchLoss {
    assert!(!batch.is_empty(), "empty batch");
    let mut apc_sum: Option<NodeId> = None;
    let mut ate_sum: Option<NodeId> = None;
    let mut apc_rows = 0usize;
    let mut ate_rows = 0usize;

    for inst in batch {
        let fwd = model.forward(g, store, inst);
        let (apc, c_apc) = g.cross_entropy_sum(fwd.apc_logits, &[inst.apc_target], IGNORE_INDEX);
        let (ate, c_ate) = g.cross_entropy_sum(fwd.ate_logits, &inst.ate_targets, IGNORE_INDEX);
        apc_rows += c_apc;
        ate_rows += c_ate;
        apc_sum = Some(match apc_sum {
            None => apc,
            Some(acc) => g.add(acc, apc),
        });
        ate_sum = Some(match ate_sum {
            None => ate,
            Some(acc) => g.add(acc, ate),
        });
    }

    let mean = |g: &mut Graph, sum: NodeId, rows: usize| {
        let denom = if rows == 0 { 0.0 } else { 1.0 / rows as f64 };
        g.scale(sum, denom)
    };
    let mut l_apc = mean(g, apc_sum.expect("non-empty batch"), apc_rows);
    let mut l_ate = mean(g, ate_sum.expect("non-empty batch"), ate_rows);

    let mut l2_value = 0.0;
    if l2_literal && l2_lambda > 0.0 {
        let names: Vec<String> = store.names().map(String::from).collect();
        let mut sq_sum: Option<NodeId> = None;
        for name in &names {
            let p = g.param(store, name);
            let sq = g.sum_squares(p);
            sq_sum = Some(match sq_sum {
                None => sq,
                Some(acc) => g.add(acc, sq),
            });
        }
        let l2 = g.scale(sq_sum.expect("at least one parameter"), l2_lambda);
        l2_value = g.scalar(l2);
        l_apc = g.add(l_apc, l2);
        l_ate = g.add(l_ate, l2);
    }

    let total = match task_mode {
        TaskMode::Atepc => g.add(l_apc, l_ate),
        TaskMode::AteOnly => l_ate,
        TaskMode::ApcOnly => l_apc,
    };

    let breakdown = LossBreakdown {
        l_apc: g.scalar(l_apc),
        l_ate: g.scalar(l_ate),
        l_total: g.scalar(total),
        l2_term: l2_value,
    };
    BatchLoss { total, l_apc, l_ate, breakdown }
}

/// Epoch loop with a seeded shuffle. Each optimizer step builds one graph
/// over the batch, backprops the mode-selected loss, and applies AdamW.
pub struct Trainer<'a> {
    model: &'a LcfAtepcModel,
    store: ParameterStore,
    optimizer: AdamW,
    data: Vec<TrainingInstance>,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    epoch: usize,
    step: usize,
    log: Vec<StepRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a LcfAtepcModel,
        store: ParameterStore,
        data: Vec<TrainingInstance>,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let optimizer = AdamW::new(cfg.learning_rate, cfg.l2_lambda);
        // Offset so the shuffle stream differs from the init stream.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
        Ok(Self { model, store, optimizer, data, cfg, rng, epoch: 0, step: 0, log: Vec::new() })
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn finish(self) -> (ParameterStore, Vec<StepRecord>) {
        (self.store, self.log)
    }

    /// One optimizer step over the given instance indices. Returns the loss
    /// breakdown and the parameter gradients that were applied.
    pub fn step_indices(
        &mut self,
        indices: &[usize],
    ) -> Result<(LossBreakdown, Vec<(String, Matrix)>), TrainError> {
        let batch: Vec<&TrainingInstance> = indices.iter().map(|&i| &self.data[i]).collect();
        let mut g = Graph::new();
        let loss = batch_loss(
            &mut g,
            self.model,
            &self.store,
            &batch,
            self.cfg.task_mode,
            self.cfg.l2_lambda,
            self.cfg.l2_literal,
        );
        if !loss.breakdown.l_total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step: self.step + 1 });
        }
        g.backward(loss.total);
        let grads = g.param_grads();
        self.optimizer.step(&mut self.store, &grads)?;
        self.step += 1;
        self.log.push(StepRecord { epoch: self.epoch + 1, step: self.step, loss: loss.breakdown });
        Ok((loss.breakdown, grads))
    }

    pub fn next_epoch(&mut self) -> Result<(), TrainError> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.rng);
        let chunks: Vec<Vec<usize>> =
            order.chunks(self.cfg.batch_size).map(|c| c.to_vec()).collect();
        for chunk in chunks {
            self.step_indices(&chunk)?;
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn run_epochs(&mut self, n: usize) -> Result<(), TrainError> {
        for _ in 0..n {
            self.next_epoch()?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub store: ParameterStore,
    pub log: Vec<StepRecord>,
    /// Epoch (1-based) whose checkpoint was selected by the dev metric.
    pub best_epoch: Option<usize>,
    pub dev_metric: Option<f64>,
}

fn selection_metric(report: &crate::eval::EvalReport, task_mode: TaskMode) -> f64 {
    let acc = report.acc_apc.unwrap_or(0.0);
    let f1 = report.f1_ate_token.unwrap_or(0.0);
    match task_mode {
        TaskMode::Atepc => {
            let mut parts = Vec::new();
            if report.acc_apc.is_some() {
                parts.push(acc);
            }
            if report.f1_ate_token.is_some() {
                parts.push(f1);
            }
            if parts.is_empty() {
                0.0
            } else {
                parts.iter().sum::<f64>() / parts.len() as f64
            }
        }
        TaskMode::AteOnly => f1,
        TaskMode::ApcOnly => acc,
    }
}

/// Full training run from fresh parameters. Writes one checkpoint per epoch
/// plus the selected final checkpoint into `outdir` when given; selects
/// best-by-dev when a dev split is provided, otherwise returns the last
/// epoch's parameters.
pub fn train(
    model: &LcfAtepcModel,
    data: Vec<TrainingInstance>,
    dev: Option<&[LabeledSentence]>,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    outdir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let store = model.init_params(cfg.seed);
    let mut trainer = Trainer::new(model, store, data, cfg.clone())?;
    let mut best: Option<(f64, usize, ParameterStore)> = None;

    for epoch in 1..=cfg.epochs {
        trainer.next_epoch()?;
        if let Some(dir) = outdir {
            trainer.store().save(&dir.join(format!("checkpoint_epoch_{epoch:03}.ckpt")))?;
        }
        if let Some(dev_sentences) = dev {
            let report =
                crate::eval::evaluate(model, trainer.store(), dev_sentences, vocab, cfg.layout, 1)
                    .map_err(|e| TrainError::DevEval(e.to_string()))?;
            let metric = selection_metric(&report, cfg.task_mode);
            if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
                best = Some((metric, epoch, trainer.store().clone()));
            }
        }
    }

    let (final_store, log) = trainer.finish();
    let (store, best_epoch, dev_metric) = match best {
        Some((m, e, s)) => (s, Some(e), Some(m)),
        None => (final_store, None, None),
    };
    if let Some(dir) = outdir {
        store.save(&dir.join("checkpoint.ckpt"))?;
    }
    Ok(TrainOutcome { store, log, best_epoch, dev_metric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_instances, parse_atepc, Vocabulary};
    use crate::encoder::EncoderConfig;
    use crate::heads::ModelConfig;

    const TINY: &str = "\
The O -1
price B_asp 2
is O -1
good O -1

bad B_asp 0
service B_asp 0
here O -1

性 B_asp 2
价 I_asp 2
比 I_asp 2
高 O -1
";

    fn tiny_setup(lcf_mode: LcfMode, task_mode: TaskMode) -> (LcfAtepcModel, Vec<TrainingInstance>, Vocabulary, TrainConfig) {
        let sentences = parse_atepc(TINY).unwrap();
        let vocab = Vocabulary::build(&sentences);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 2,
            max_seq_len: 8,
            srd_alpha: 1,
            l2_lambda: 1e-5,
            l2_literal: false,
            task_mode,
            lcf_mode,
            layout: Layout::Base,
            seed: 11,
        };
        let model = LcfAtepcModel::new(ModelConfig {
            encoder: EncoderConfig {
                d_hidden: 8,
                heads: 2,
                layers: 1,
                vocab_size: vocab.len(),
                max_seq_len: cfg.max_seq_len,
            },
            lcf_mode,
            srd_alpha: cfg.srd_alpha,
            polarity_classes: 3,
        });
        let mut data = Vec::new();
        for s in &sentences {
            data.extend(make_instances(s, cfg.layout, &vocab, cfg.max_seq_len).unwrap());
        }
        (model, data, vocab, cfg)
    }

    #[test]
    fn joint_loss_modes() {
        let b = joint_loss(1.0, 0.5, 0.0, TaskMode::Atepc);
        assert_eq!(b.l_total, 1.5);
        let b = joint_loss(1.0, 0.5, 0.0, TaskMode::AteOnly);
        assert_eq!(b.l_total, 0.5);
        let b = joint_loss(1.0, 0.5, 0.0, TaskMode::ApcOnly);
        assert_eq!(b.l_total, 1.0);
    }

    #[test]
    fn adamw_zero_gradient_without_decay_is_a_no_op() {
        let mut store = ParameterStore::new(0);
        store.add("w", Matrix::from_vec(1, 2, vec![0.3, -0.7]));
        let before = store.get("w").clone();
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut store, &[("w".into(), Matrix::zeros(1, 2))]).unwrap();
        assert_eq!(store.get("w"), &before);
    }

    #[test]
    fn adamw_single_scalar_step_matches_hand_trace() {
        // theta=0.5, g=0.2, lr=0.1, decay=0.01, first step.
        let mut store = ParameterStore::new(0);
        store.add("w", Matrix::from_vec(1, 1, vec![0.5]));
        let mut opt = AdamW::new(0.1, 0.01);
        opt.step(&mut store, &[("w".into(), Matrix::from_vec(1, 1, vec![0.2]))]).unwrap();

        let m_hat: f64 = (0.1 * 0.2) / (1.0 - 0.9);
        let v_hat: f64 = (0.001 * 0.04) / (1.0 - 0.999);
        let expected = 0.5 * (1.0 - 0.1 * 0.01) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((store.get("w").at(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn adamw_decay_only_shrinks_multiplicatively() {
        let mut store = ParameterStore::new(0);
        store.add("w", Matrix::from_vec(1, 1, vec![2.0]));
        let mut opt = AdamW::new(0.5, 0.1);
        opt.step(&mut store, &[("w".into(), Matrix::zeros(1, 1))]).unwrap();
        assert!((store.get("w").at(0, 0) - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn adamw_rejects_non_finite_gradients() {
        let mut store = ParameterStore::new(0);
        store.add("w", Matrix::zeros(1, 1));
        let mut opt = AdamW::new(0.1, 0.0);
        let err = opt.step(&mut store, &[("w".into(), Matrix::from_vec(1, 1, vec![f64::NAN]))]);
        assert!(matches!(err, Err(TrainError::NonFiniteGradient { .. })));
    }

    #[test]
    fn breakdown_is_additive_every_step() {
        let (model, data, _, cfg) = tiny_setup(LcfMode::Cdm, TaskMode::Atepc);
        let store = model.init_params(cfg.seed);
        let mut trainer = Trainer::new(&model, store, data, cfg).unwrap();
        trainer.run_epochs(3).unwrap();
        for r in trainer.log() {
            assert!((r.loss.l_total - (r.loss.l_apc + r.loss.l_ate)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_task_modes_freeze_the_other_head() {
        let (model, data, _, mut cfg) = tiny_setup(LcfMode::Cdm, TaskMode::AteOnly);
        cfg.task_mode = TaskMode::AteOnly;
        let store = model.init_params(cfg.seed);
        let mut trainer = Trainer::new(&model, store, data.clone(), cfg.clone()).unwrap();
        for step in 0..4 {
            let (loss, grads) = trainer.step_indices(&[step % data.len()]).unwrap();
            assert_eq!(loss.l_total, loss.l_ate);
            for name in ["apc.w", "apc.b", "enc_l.tok_emb", "fil.w"] {
                let g = grads.iter().find(|(n, _)| n == name).unwrap();
                assert_eq!(g.1.max_abs(), 0.0, "{name} received gradient in ate-only mode");
            }
        }

        cfg.task_mode = TaskMode::ApcOnly;
        let store = model.init_params(cfg.seed);
        let mut trainer = Trainer::new(&model, store, data.clone(), cfg).unwrap();
        for step in 0..4 {
            let (loss, grads) = trainer.step_indices(&[step % data.len()]).unwrap();
            assert_eq!(loss.l_total, loss.l_apc);
            for name in ["ate.w", "ate.b"] {
                let g = grads.iter().find(|(n, _)| n == name).unwrap();
                assert_eq!(g.1.max_abs(), 0.0, "{name} received gradient in apc-only mode");
            }
        }
    }

    #[test]
    fn literal_l2_adds_lambda_sum_squares_to_both_losses() {
        let (model, data, _, cfg) = tiny_setup(LcfMode::Cdw, TaskMode::Atepc);
        let store = model.init_params(cfg.seed);
        let batch: Vec<&TrainingInstance> = data.iter().collect();

        let mut g0 = Graph::new();
        let plain = batch_loss(&mut g0, &model, &store, &batch, cfg.task_mode, 0.01, false);
        let mut g1 = Graph::new();
        let literal = batch_loss(&mut g1, &model, &store, &batch, cfg.task_mode, 0.01, true);

        let expected = 0.01 * store.sum_squares();
        assert!((literal.breakdown.l2_term - expected).abs() < 1e-12);
        assert!((literal.breakdown.l_apc - plain.breakdown.l_apc - expected).abs() < 1e-12);
        assert!((literal.breakdown.l_ate - plain.breakdown.l_ate - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_leaves_pure_cross_entropy() {
        let (model, data, _, cfg) = tiny_setup(LcfMode::Cdm, TaskMode::Atepc);
        let store = model.init_params(cfg.seed);
        let batch: Vec<&TrainingInstance> = data.iter().collect();
        let mut g0 = Graph::new();
        let a = batch_loss(&mut g0, &model, &store, &batch, cfg.task_mode, 0.0, true);
        let mut g1 = Graph::new();
        let b = batch_loss(&mut g1, &model, &store, &batch, cfg.task_mode, 0.0, false);
        assert_eq!(a.breakdown.l_apc, b.breakdown.l_apc);
        assert_eq!(a.breakdown.l2_term, 0.0);
    }

    #[test]
    fn batch_mean_pools_rows_across_instances() {
        // A two-instance batch must equal the row-weighted mean of the
        // single-instance losses.
        let (model, data, _, cfg) = tiny_setup(LcfMode::Cdm, TaskMode::Atepc);
        let store = model.init_params(cfg.seed);

        let single = |idx: usize| {
            let mut g = Graph::new();
            let b = batch_loss(&mut g, &model, &store, &[&data[idx]], cfg.task_mode, 0.0, false);
            b.breakdown
        };
        let mut g = Graph::new();
        let both = batch_loss(&mut g, &model, &store, &[&data[0], &data[1]], cfg.task_mode, 0.0, false);
        let (a, b) = (single(0), single(1));
        // Both instances expose exactly one APC row, so the batch APC loss
        // is the plain average.
        assert!((both.breakdown.l_apc - (a.l_apc + b.l_apc) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_replays_the_loss_curve_bitwise() {
        let run = || {
            let (model, data, _, cfg) = tiny_setup(LcfMode::Fusion, TaskMode::Atepc);
            let store = model.init_params(cfg.seed);
            let mut trainer = Trainer::new(&model, store, data, cfg).unwrap();
            trainer.run_epochs(3).unwrap();
            trainer.log().iter().map(|r| r.loss.l_total).collect::<Vec<f64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epochs_zero_returns_initial_params_and_empty_log() {
        let (model, data, vocab, mut cfg) = tiny_setup(LcfMode::Cdm, TaskMode::Atepc);
        cfg.epochs = 0;
        let outcome = train(&model, data, None, &vocab, &cfg, None).unwrap();
        assert!(outcome.log.is_empty());
        let fresh = model.init_params(cfg.seed);
        for (name, p) in fresh.iter() {
            assert_eq!(outcome.store.get(name), &p.value);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (model, _, vocab, cfg) = tiny_setup(LcfMode::Cdm, TaskMode::Atepc);
        let err = train(&model, Vec::new(), None, &vocab, &cfg, None);
        assert!(matches!(err, Err(TrainError::EmptyDataset)));
    }
}

//! Metrics and reports: polarity accuracy and macro-F1, extraction F1 at
//! token and chunk level, corpus statistics, and the SRD threshold sweep.
//!
//! Extraction F1 is reported twice. The token-level score is the macro mean
//! of per-class F1 over the three IOB tags; the chunk-level score counts
//! exact `(start, end)` span matches. Both are computed because published
//! ABSA numbers do not always say which one they mean; the token-level score
//! is the headline.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{
    extract_aspects, make_instances, make_sentence_instance, AteTag, CorpusError, LabeledSentence,
    Layout, Vocabulary, ATE_CLASSES, POLARITY_NAMES,
};
use crate::heads::{decode_iob, LcfAtepcModel, Prediction};
use crate::numerics::ParameterStore;
use crate::train::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no items to score")]
    EmptyInput,
    #[error("sentence {sentence}: gold has {gold} labels, prediction has {pred}")]
    LengthMismatch { sentence: usize, gold: usize, pred: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Gold-by-predicted counts over a fixed class set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn record(&mut self, gold: usize, pred: usize) {
        assert!(gold < self.classes && pred < self.classes, "class out of range");
        self.counts[gold * self.classes + pred] += 1;
    }

    pub fn count(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold * self.classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: usize = (0..self.classes).map(|c| self.count(c, c)).sum();
        trace as f64 / self.total() as f64
    }

    pub fn support_gold(&self, class: usize) -> usize {
        (0..self.classes).map(|p| self.count(class, p)).sum()
    }

    pub fn support_pred(&self, class: usize) -> usize {
        (0..self.classes).map(|g| self.count(g, class)).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support_gold: usize,
    pub support_pred: usize,
}

fn class_report(cm: &ConfusionMatrix, class: usize, label: &str) -> ClassReport {
    let tp = cm.count(class, class);
    let support_gold = cm.support_gold(class);
    let support_pred = cm.support_pred(class);
    let precision = if support_pred == 0 { 0.0 } else { tp as f64 / support_pred as f64 };
    let recall = if support_gold == 0 { 0.0 } else { tp as f64 / support_gold as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    ClassReport { label: label.to_string(), precision, recall, f1, support_gold, support_pred }
}

/// Unweighted mean of per-class F1; classes absent from both gold and
/// prediction are excluded so they cannot deflate small datasets.
pub fn macro_f1(cm: &ConfusionMatrix, labels: &[&str]) -> (f64, Vec<ClassReport>) {
    assert_eq!(labels.len(), cm.classes);
    let reports: Vec<ClassReport> =
        labels.iter().enumerate().map(|(c, l)| class_report(cm, c, l)).collect();
    let present: Vec<&ClassReport> =
        reports.iter().filter(|r| r.support_gold + r.support_pred > 0).collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|r| r.f1).sum::<f64>() / present.len() as f64
    };
    (mean, reports)
}

/// Accuracy, macro-F1 and the confusion matrix for polarity predictions.
pub fn apc_metrics(
    golds: &[i64],
    preds: &[i64],
    classes: usize,
) -> Result<(f64, f64, ConfusionMatrix), EvalError> {
    if golds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    assert_eq!(golds.len(), preds.len(), "gold/pred length mismatch");
    let mut cm = ConfusionMatrix::new(classes);
    for (&g, &p) in golds.iter().zip(preds) {
        cm.record(g as usize, p as usize);
    }
    let labels: Vec<&str> = (0..classes).map(|c| POLARITY_NAMES.get(c).copied().unwrap_or("?")).collect();
    let (f1, _) = macro_f1(&cm, &labels);
    Ok((cm.accuracy(), f1, cm))
}

/// Token-level macro-F1 over the three IOB classes. Sequences are aligned
/// per sentence; padding must already be stripped.
pub fn ate_token_f1(
    golds: &[Vec<AteTag>],
    preds: &[Vec<AteTag>],
) -> Result<(f64, ConfusionMatrix), EvalError> {
    assert_eq!(golds.len(), preds.len(), "gold/pred sentence count mismatch");
    if golds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::new(ATE_CLASSES);
    for (i, (g, p)) in golds.iter().zip(preds).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch { sentence: i, gold: g.len(), pred: p.len() });
        }
        for (&gt, &pt) in g.iter().zip(p) {
            cm.record(gt.id() as usize, pt.id() as usize);
        }
    }
    let (f1, _) = macro_f1(&cm, &["B_asp", "I_asp", "O"]);
    Ok((f1, cm))
}

/// Exact-span F1 over sentence-aligned span lists. Declared 1 when both
/// sides are empty everywhere (vacuous perfection), 0 when only one side is.
pub fn ate_chunk_f1(golds: &[Vec<(usize, usize)>], preds: &[Vec<(usize, usize)>]) -> f64 {
    assert_eq!(golds.len(), preds.len(), "gold/pred sentence count mismatch");
    let mut tp = 0usize;
    let mut gold_total = 0usize;
    let mut pred_total = 0usize;
    for (g, p) in golds.iter().zip(preds) {
        gold_total += g.len();
        pred_total += p.len();
        tp += p.iter().filter(|span| g.contains(span)).count();
    }
    if gold_total == 0 && pred_total == 0 {
        return 1.0;
    }
    let precision = if pred_total == 0 { 0.0 } else { tp as f64 / pred_total as f64 };
    let recall = if gold_total == 0 { 0.0 } else { tp as f64 / gold_total as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub acc_apc: Option<f64>,
    pub f1_apc: Option<f64>,
    pub f1_ate_token: Option<f64>,
    pub f1_ate_chunk: Option<f64>,
    pub apc_classes: Vec<ClassReport>,
    pub ate_classes: Vec<ClassReport>,
    /// Number of scored (sentence, aspect) pairs.
    pub apc_support: usize,
    /// Number of scored tokens.
    pub ate_token_support: usize,
    pub note: Option<String>,
}

impl EvalReport {
    /// Flat `metric,value` CSV; n/a for metrics that were skipped.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut push = |name: &str, v: Option<f64>| {
            out.push_str(name);
            out.push(',');
            match v {
                Some(v) => out.push_str(&v.to_string()),
                None => out.push_str("n/a"),
            }
            out.push('\n');
        };
        push("acc_apc", self.acc_apc);
        push("f1_apc", self.f1_apc);
        push("f1_ate_token", self.f1_ate_token);
        push("f1_ate_chunk", self.f1_ate_chunk);
        for r in self.apc_classes.iter().chain(&self.ate_classes) {
            push(&format!("{}_precision", r.label), Some(r.precision));
            push(&format!("{}_recall", r.label), Some(r.recall));
            push(&format!("{}_f1", r.label), Some(r.f1));
        }
        out
    }
}

struct SentenceEval {
    apc_pairs: Vec<(i64, i64)>,
    gold_tags: Vec<AteTag>,
    pred_tags: Vec<AteTag>,
    gold_spans: Vec<(usize, usize)>,
    pred_spans: Vec<(usize, usize)>,
}

fn eval_sentence(
    model: &LcfAtepcModel,
    store: &ParameterStore,
    sentence: &LabeledSentence,
    vocab: &Vocabulary,
    layout: Layout,
    max_seq_len: usize,
) -> Result<SentenceEval, CorpusError> {
    let mut apc_pairs = Vec::new();
    for inst in make_instances(sentence, layout, vocab, max_seq_len)? {
        let pred = model.predict(store, &inst);
        apc_pairs.push((inst.apc_target, crate::heads::argmax(&pred.apc_dist) as i64));
    }

    // The extraction pass always runs on the plain sentence layout; the
    // aspect choice cannot influence the global branch anyway.
    let sent_inst = make_sentence_instance(sentence, vocab, max_seq_len)?;
    let Prediction { ate_tags, .. } = model.predict(store, &sent_inst);
    let gold_tags: Vec<AteTag> = sentence.ate_labels()[..sent_inst.body_len].to_vec();
    let gold_spans = decode_iob(&gold_tags);
    let pred_spans = decode_iob(&ate_tags);

    Ok(SentenceEval { apc_pairs, gold_tags, pred_tags: ate_tags, gold_spans, pred_spans })
}

/// Run the model over a labeled dataset and assemble the report.
///
/// Extraction metrics are skipped under the sentence-pair layout: the
/// training inputs carry the appended aspect, so extraction scores on plain
/// sentences would not describe the trained model.
pub fn evaluate(
    model: &LcfAtepcModel,
    store: &ParameterStore,
    sentences: &[LabeledSentence],
    vocab: &Vocabulary,
    layout: Layout,
    threads: usize,
) -> Result<EvalReport, EvalError> {
    if sentences.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let max_seq_len = model.config().encoder.max_seq_len;
    let run = |s: &LabeledSentence| eval_sentence(model, store, s, vocab, layout, max_seq_len);
    let results: Result<Vec<SentenceEval>, CorpusError> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction");
        pool.install(|| sentences.par_iter().map(run).collect())
    } else {
        sentences.iter().map(run).collect()
    };
    let results = results?;

    let mut golds = Vec::new();
    let mut preds = Vec::new();
    for r in &results {
        for &(g, p) in &r.apc_pairs {
            golds.push(g);
            preds.push(p);
        }
    }
    let classes = model.config().polarity_classes;
    let (acc_apc, f1_apc, apc_classes, apc_support) = if golds.is_empty() {
        (None, None, Vec::new(), 0)
    } else {
        let (acc, f1, cm) = apc_metrics(&golds, &preds, classes)?;
        let labels: Vec<&str> =
            (0..classes).map(|c| POLARITY_NAMES.get(c).copied().unwrap_or("?")).collect();
        let (_, reports) = macro_f1(&cm, &labels);
        (Some(acc), Some(f1), reports, cm.total())
    };

    let mut report = EvalReport {
        acc_apc,
        f1_apc,
        f1_ate_token: None,
        f1_ate_chunk: None,
        apc_classes,
        ate_classes: Vec::new(),
        apc_support,
        ate_token_support: 0,
        note: None,
    };

    if layout == Layout::Spc {
        report.note = Some("extraction F1 is not available for the sentence-pair input layout".into());
        return Ok(report);
    }

    let gold_tags: Vec<Vec<AteTag>> = results.iter().map(|r| r.gold_tags.clone()).collect();
    let pred_tags: Vec<Vec<AteTag>> = results.iter().map(|r| r.pred_tags.clone()).collect();
    let (token_f1, cm) = ate_token_f1(&gold_tags, &pred_tags)?;
    let (_, ate_classes) = macro_f1(&cm, &["B_asp", "I_asp", "O"]);
    report.f1_ate_token = Some(token_f1);
    report.ate_token_support = cm.total();
    report.ate_classes = ate_classes;

    let gold_spans: Vec<Vec<(usize, usize)>> = results.iter().map(|r| r.gold_spans.clone()).collect();
    let pred_spans: Vec<Vec<(usize, usize)>> = results.iter().map(|r| r.pred_spans.clone()).collect();
    report.f1_ate_chunk = Some(ate_chunk_f1(&gold_spans, &pred_spans));
    Ok(report)
}

/// Aspect polarity counts per split, Table-style, as CSV.
pub fn corpus_stats(splits: &[(&str, &[LabeledSentence])]) -> String {
    let mut out = String::from("split,negative,neutral,positive,total\n");
    for (name, sentences) in splits {
        let mut counts = [0usize; 3];
        for s in *sentences {
            for span in extract_aspects(s) {
                counts[span.polarity as usize] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        out.push_str(&format!("{name},{},{},{},{total}\n", counts[0], counts[1], counts[2]));
    }
    out
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub alpha: i64,
    pub report: EvalReport,
}

/// Train and evaluate once per SRD threshold, all runs from the same seed.
pub fn srd_sweep(
    model_template: &crate::heads::ModelConfig,
    train_sentences: &[LabeledSentence],
    eval_sentences: &[LabeledSentence],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    alphas: &[i64],
    threads: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    assert!(!alphas.is_empty(), "alphas must be non-empty");
    let mut rows = Vec::new();
    for &alpha in alphas {
        let mut model_cfg = *model_template;
        model_cfg.srd_alpha = alpha;
        let model = LcfAtepcModel::new(model_cfg);
        let mut run_cfg = cfg.clone();
        run_cfg.srd_alpha = alpha;

        let mut data = Vec::new();
        for s in train_sentences {
            let instances = make_instances(s, run_cfg.layout, vocab, model_cfg.encoder.max_seq_len)?;
            if instances.is_empty() {
                data.push(make_sentence_instance(s, vocab, model_cfg.encoder.max_seq_len)?);
            } else {
                data.extend(instances);
            }
        }
        let outcome = train(&model, data, None, vocab, &run_cfg, None)?;
        let report = evaluate(&model, &outcome.store, eval_sentences, vocab, run_cfg.layout, threads)?;
        rows.push(SweepRow { alpha, report });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,acc_apc,f1_apc,f1_ate_token,f1_ate_chunk\n");
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into());
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.alpha,
            fmt(row.report.acc_apc),
            fmt(row.report.f1_apc),
            fmt(row.report.f1_ate_token),
            fmt(row.report.f1_ate_chunk),
        ));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use AteTag::{BeginAspect as B, InsideAspect as I, Outside as O};

    #[test]
    fn apc_metrics_hand_counts() {
        let (acc, _, _) = apc_metrics(&[0, 1, 2, 2], &[0, 1, 2, 0], 3).unwrap();
        assert_eq!(acc, 0.75);

        let (acc, f1, _) = apc_metrics(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(f1, 1.0);

        // All-one-class predictions on balanced golds.
        let (acc, _, _) = apc_metrics(&[0, 1, 2], &[1, 1, 1], 3).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn apc_metrics_rejects_empty_input() {
        assert!(matches!(apc_metrics(&[], &[], 3), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn accuracy_is_trace_over_total() {
        let (_, _, cm) = apc_metrics(&[0, 1, 2, 2, 0], &[0, 2, 2, 0, 0], 3).unwrap();
        let trace = cm.count(0, 0) + cm.count(1, 1) + cm.count(2, 2);
        assert_eq!(cm.accuracy(), trace as f64 / cm.total() as f64);
    }

    #[test]
    fn ate_token_f1_hand_confusion() {
        // gold O O B vs pred O O O: B gets F1 0, O gets P=2/3 R=1 so F1 0.8,
        // I is absent from both sides and excluded: macro (0 + 0.8) / 2.
        let (f1, _) = ate_token_f1(&[vec![O, O, B]], &[vec![O, O, O]]).unwrap();
        assert!((f1 - 0.4).abs() < 1e-12);

        let (f1, _) = ate_token_f1(&[vec![O, B, I]], &[vec![O, B, I]]).unwrap();
        assert_eq!(f1, 1.0);

        // All-O on both sides: only the O class participates.
        let (f1, _) = ate_token_f1(&[vec![O, O]], &[vec![O, O]]).unwrap();
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn ate_token_f1_rejects_misaligned_sentences() {
        let err = ate_token_f1(&[vec![O, O]], &[vec![O]]).unwrap_err();
        assert!(matches!(err, EvalError::LengthMismatch { sentence: 0, .. }));
    }

    #[test]
    fn ate_chunk_f1_hand_counts() {
        assert_eq!(ate_chunk_f1(&[vec![(1, 2)]], &[vec![(1, 2)]]), 1.0);
        // P = 1, R = 0.5 gives 2/3.
        let f1 = ate_chunk_f1(&[vec![(1, 2), (6, 7)]], &[vec![(1, 2)]]);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ate_chunk_f1(&[vec![]], &[vec![(0, 1)]]), 0.0);
        assert_eq!(ate_chunk_f1(&[vec![]], &[vec![]]), 1.0);
    }

    #[test]
    fn macro_f1_invariant_under_class_relabeling() {
        let golds = [0i64, 1, 2, 2, 1, 0, 2];
        let preds = [0i64, 2, 2, 0, 1, 0, 1];
        let (_, f1, _) = apc_metrics(&golds, &preds, 3).unwrap();
        // Swap classes 0 and 2 everywhere.
        let swap = |v: i64| match v {
            0 => 2,
            2 => 0,
            x => x,
        };
        let golds2: Vec<i64> = golds.iter().map(|&v| swap(v)).collect();
        let preds2: Vec<i64> = preds.iter().map(|&v| swap(v)).collect();
        let (_, f1_swapped, _) = apc_metrics(&golds2, &preds2, 3).unwrap();
        assert!((f1 - f1_swapped).abs() < 1e-15);
    }

    #[test]
    fn corpus_stats_counts_spans() {
        let text = "\
好 B_asp 2
差 B_asp 0
的 O -1
";
        let sentences = crate::corpus::parse_atepc(text).unwrap();
        let csv = corpus_stats(&[("train", &sentences), ("test", &[])]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "split,negative,neutral,positive,total");
        assert_eq!(lines[1], "train,1,0,1,2");
        assert_eq!(lines[2], "test,0,0,0,0");
    }
}

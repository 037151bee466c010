//! Scoring predicted annotations against gold: per-type F1, support-weighted
//! overall F1 (OA), and binary factual-vs-hallucinated F1 (Bi), plus report
//! rendering and ablation sweeps.

mod report;
mod sweep;

pub use report::{render_report, ReportFormat};
pub use sweep::{
    load_dataset_jsonl, run_sweep, sweep_csv, DatasetExample, DatasetImporter, JsonlImporter,
    SweepError, SweepRow, SweepSetting,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotatedDocument, HallucType, Label, LabelSet, StripPolicy};

/// Gold and predicted label sets for one aligned sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub gold: LabelSet,
    pub pred: LabelSet,
}

impl LabeledPair {
    pub fn new(gold: LabelSet, pred: LabelSet) -> Self {
        Self { gold, pred }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("documents differ in underlying plain text")]
    TextMismatch,
    #[error("documents segment differently: gold {gold} vs pred {pred} sentences")]
    SegmentationMismatch { gold: usize, pred: usize },
    #[error("no hallucination type has positive support")]
    ZeroSupport,
}

/// Pairs the two documents sentence by sentence. Both must derive from the
/// same plain text and segment identically.
pub fn align_and_pair(
    gold: &AnnotatedDocument,
    pred: &AnnotatedDocument,
) -> Result<Vec<LabeledPair>, EvalError> {
    if gold.strip_annotations(StripPolicy::KeepOriginal)
        != pred.strip_annotations(StripPolicy::KeepOriginal)
    {
        return Err(EvalError::TextMismatch);
    }
    let gold_sets = gold.sentence_label_sets();
    let pred_sets = pred.sentence_label_sets();
    if gold_sets.len() != pred_sets.len() {
        return Err(EvalError::SegmentationMismatch {
            gold: gold_sets.len(),
            pred: pred_sets.len(),
        });
    }
    Ok(gold_sets
        .into_iter()
        .zip(pred_sets)
        .map(|(gold, pred)| LabeledPair { gold, pred })
        .collect())
}

/// Precision, recall, F1, and gold support for one type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-type F1 with the standard 0/0 → 0 convention. A pair counts as TP
/// when the type appears in both sets, FP when predicted only, FN when gold
/// only.
pub fn per_type_f1(pairs: &[LabeledPair], t: HallucType) -> TypeMetrics {
    let label = Label::Halluc(t);
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut support = 0usize;
    for pair in pairs {
        let in_gold = pair.gold.contains(&label);
        let in_pred = pair.pred.contains(&label);
        if in_gold {
            support += 1;
        }
        match (in_gold, in_pred) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = safe_div(tp as f64, (tp + fp) as f64);
    let recall = safe_div(tp as f64, (tp + fn_) as f64);
    let f1 = safe_div(2.0 * precision * recall, precision + recall);
    TypeMetrics {
        precision,
        recall,
        f1,
        support,
    }
}

/// How OA aggregates the six per-type scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OaAverage {
    /// Support-weighted mean of per-type F1 (the reported metric).
    Weighted,
    /// Micro-averaged F1 over pooled per-type decisions (comparison flag).
    Micro,
}

/// Support-weighted mean of per-type F1 over the six hallucination types
/// (Factual is excluded). Types with zero support do not participate.
pub fn oa_f1(per_type: &BTreeMap<HallucType, TypeMetrics>) -> Result<f64, EvalError> {
    let total: usize = per_type.values().map(|m| m.support).sum();
    if total == 0 {
        return Err(EvalError::ZeroSupport);
    }
    Ok(per_type
        .values()
        .map(|m| m.f1 * m.support as f64)
        .sum::<f64>()
        / total as f64)
}

/// Micro-averaged alternative: pool TP/FP/FN across the six types.
pub fn oa_f1_micro(pairs: &[LabeledPair]) -> Result<f64, EvalError> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut support = 0usize;
    for t in HallucType::ALL {
        let label = Label::Halluc(t);
        for pair in pairs {
            let in_gold = pair.gold.contains(&label);
            let in_pred = pair.pred.contains(&label);
            if in_gold {
                support += 1;
            }
            match (in_gold, in_pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if support == 0 {
        return Err(EvalError::ZeroSupport);
    }
    let precision = safe_div(tp as f64, (tp + fp) as f64);
    let recall = safe_div(tp as f64, (tp + fn_) as f64);
    Ok(safe_div(2.0 * precision * recall, precision + recall))
}

/// A sentence counts as hallucinated when its label set is anything other
/// than `{Factual}`. Bi is the F1 of the hallucinated class.
pub fn bi_f1(pairs: &[LabeledPair]) -> f64 {
    let hallucinated = |set: &LabelSet| set.iter().any(|l| matches!(l, Label::Halluc(_)));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for pair in pairs {
        match (hallucinated(&pair.gold), hallucinated(&pair.pred)) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = safe_div(tp as f64, (tp + fp) as f64);
    let recall = safe_div(tp as f64, (tp + fn_) as f64);
    safe_div(2.0 * precision * recall, precision + recall)
}

/// Pair totals carried alongside the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub pairs: usize,
    pub gold_hallucinated: usize,
    pub pred_hallucinated: usize,
}

/// Per-type precision/recall/F1 plus the OA and Bi aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_type: BTreeMap<HallucType, TypeMetrics>,
    pub oa_f1: f64,
    pub bi_f1: f64,
    pub counts: PairCounts,
}

/// Computes the full report over aligned pairs. Errors with `ZeroSupport`
/// when the gold side contains no hallucination of any type.
pub fn compute_report(pairs: &[LabeledPair], oa: OaAverage) -> Result<MetricsReport, EvalError> {
    let mut per_type = BTreeMap::new();
    for t in HallucType::ALL {
        per_type.insert(t, per_type_f1(pairs, t));
    }
    let oa_value = match oa {
        OaAverage::Weighted => oa_f1(&per_type)?,
        OaAverage::Micro => oa_f1_micro(pairs)?,
    };
    let hallucinated = |set: &LabelSet| set.iter().any(|l| matches!(l, Label::Halluc(_)));
    let counts = PairCounts {
        pairs: pairs.len(),
        gold_hallucinated: pairs.iter().filter(|p| hallucinated(&p.gold)).count(),
        pred_hallucinated: pairs.iter().filter(|p| hallucinated(&p.pred)).count(),
    };
    Ok(MetricsReport {
        per_type,
        oa_f1: oa_value,
        bi_f1: bi_f1(pairs),
        counts,
    })
}

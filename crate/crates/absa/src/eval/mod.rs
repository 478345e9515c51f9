//! Micro-averaged F1 evaluation for the aspect+sentiment and aspect-only
//! tasks, the majority-class baseline, and reference-score deltas for runs
//! on the official data.
//!
//! Items are pooled over the whole corpus: (doc, aspect, polarity) triples
//! in aspect+sentiment mode, (doc, aspect) pairs in aspect-only mode.
//! TP/FP/FN come from exact set intersection; precision or recall with a
//! zero denominator is defined as 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Polarity, Split};
use crate::model::{ArchId, AspectDetector, ModelError, PredictionSet, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(
        "prediction/gold document sets differ: missing in predictions {missing_in_pred:?}, \
         missing in gold {missing_in_gold:?}"
    )]
    IdMismatch {
        missing_in_pred: Vec<String>,
        missing_in_gold: Vec<String>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Which task the evaluator scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    AspectSentiment,
    AspectOnly,
}

impl TaskMode {
    pub fn parse(s: &str) -> Option<TaskMode> {
        match s {
            "aspect-sentiment" => Some(TaskMode::AspectSentiment),
            "aspect-only" => Some(TaskMode::AspectOnly),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::AspectSentiment => "aspect-sentiment",
            TaskMode::AspectOnly => "aspect-only",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Micro-averaged scores with the raw counts for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Dev/test gold conflicts resolved by keeping the first-listed
    /// polarity.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub resolved_conflicts: usize,
    /// Reference score from the GermEval 2017 results grid, when the
    /// (architecture, embedding, split, task) cell exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_f1: Option<f64>,
    /// `f1 − reference_f1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_delta: Option<f64>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

fn f1_from(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Micro-averaged precision/recall/F1 over pooled items. The prediction and
/// gold maps must cover exactly the same document ids.
pub fn micro_f1(
    predictions: &BTreeMap<String, PredictionSet>,
    gold: &BTreeMap<String, BTreeMap<usize, Polarity>>,
    task: TaskMode,
) -> Result<EvalReport> {
    let missing_in_pred: Vec<String> = gold
        .keys()
        .filter(|id| !predictions.contains_key(*id))
        .cloned()
        .collect();
    let missing_in_gold: Vec<String> = predictions
        .keys()
        .filter(|id| !gold.contains_key(*id))
        .cloned()
        .collect();
    if !missing_in_pred.is_empty() || !missing_in_gold.is_empty() {
        return Err(EvalError::IdMismatch {
            missing_in_pred,
            missing_in_gold,
        });
    }

    type Item<'a> = (&'a str, usize, Option<Polarity>);
    let project = |aspect: usize, polarity: Polarity| -> (usize, Option<Polarity>) {
        match task {
            TaskMode::AspectSentiment => (aspect, Some(polarity)),
            TaskMode::AspectOnly => (aspect, None),
        }
    };

    let mut pred_items: BTreeSet<Item> = BTreeSet::new();
    for (id, set) in predictions {
        for (&aspect, &(polarity, _)) in &set.items {
            let (a, p) = project(aspect, polarity);
            pred_items.insert((id, a, p));
        }
    }
    let mut gold_items: BTreeSet<Item> = BTreeSet::new();
    for (id, labels) in gold {
        for (&aspect, &polarity) in labels {
            let (a, p) = project(aspect, polarity);
            gold_items.insert((id, a, p));
        }
    }

    let tp = pred_items.intersection(&gold_items).count();
    let fp = pred_items.len() - tp;
    let fn_ = gold_items.len() - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(EvalReport {
        task,
        split: None,
        precision,
        recall,
        f1: f1_from(precision, recall),
        tp,
        fp,
        fn_,
        resolved_conflicts: 0,
        reference_f1: None,
        reference_delta: None,
    })
}

/// Gold label maps for a document set, resolving any dev/test conflicts by
/// keeping the first-listed polarity. Returns the maps and the number of
/// conflicts resolved.
pub fn gold_maps(docs: &[Document]) -> (BTreeMap<String, BTreeMap<usize, Polarity>>, usize) {
    let mut gold = BTreeMap::new();
    let mut resolved = 0;
    for doc in docs {
        let (labels, had_conflict) = doc.label_map_first_listed();
        if had_conflict {
            resolved += 1;
        }
        gold.insert(doc.id.clone(), labels);
    }
    (gold, resolved)
}

/// Runs inference over a document set and scores it. Pipeline models use
/// `detector` (or their own embedded one); detection errors propagate into
/// the aspect+sentiment score, mirroring the realistic pipeline setting.
pub fn evaluate(
    model: &TrainedModel,
    docs: &[Document],
    task: TaskMode,
    detector: Option<&dyn AspectDetector>,
) -> Result<EvalReport> {
    let mut predictions = BTreeMap::new();
    for doc in docs {
        let set = model.predict(&doc.id, &doc.tokens, detector)?;
        predictions.insert(doc.id.clone(), set);
    }
    let (gold, resolved) = gold_maps(docs);
    let mut report = micro_f1(&predictions, &gold, task)?;
    report.resolved_conflicts = resolved;
    report.split = docs.first().map(|d| d.split).filter(|s| docs.iter().all(|d| d.split == *s));
    Ok(report)
}

// ── majority-class baseline ───────────────────────────────────────────────

/// Predictor emitting, for every document, the single most frequent
/// (aspect, polarity) pair of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub aspect: usize,
    pub polarity: Polarity,
}

impl MajorityBaseline {
    /// Counts gold (aspect, polarity) items; ties break toward the
    /// lexicographically smaller (aspect index, class index).
    pub fn fit(train_docs: &[Document]) -> Result<Self> {
        let mut counts: BTreeMap<(usize, u8), usize> = BTreeMap::new();
        for doc in train_docs {
            let (labels, _) = doc.label_map_first_listed();
            for (aspect, polarity) in labels {
                *counts.entry((aspect, polarity.class_index())).or_insert(0) += 1;
            }
        }
        // BTreeMap iterates keys ascending, so `>` keeps the smaller key on
        // ties.
        let mut best: Option<((usize, u8), usize)> = None;
        for (key, count) in counts {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((key, count));
            }
        }
        let ((aspect, class), _) =
            best.ok_or_else(|| EvalError::Invalid("empty training data".into()))?;
        let polarity = Polarity::from_class_index(class)
            .flatten()
            .expect("counted classes are polarities");
        Ok(Self { aspect, polarity })
    }

    pub fn predict(&self) -> PredictionSet {
        let mut items = BTreeMap::new();
        items.insert(self.aspect, (self.polarity, 1.0));
        PredictionSet { items }
    }

    /// Scores the baseline on a document set.
    pub fn evaluate(&self, docs: &[Document], task: TaskMode) -> Result<EvalReport> {
        let predictions: BTreeMap<String, PredictionSet> = docs
            .iter()
            .map(|d| (d.id.clone(), self.predict()))
            .collect();
        let (gold, resolved) = gold_maps(docs);
        let mut report = micro_f1(&predictions, &gold, task)?;
        report.resolved_conflicts = resolved;
        Ok(report)
    }
}

// ── reference results ─────────────────────────────────────────────────────

/// Embedding family used for a run; selects the reference-grid column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Word2vec,
    Glove,
    Fasttext,
    Other,
}

impl EmbeddingKind {
    pub fn parse(s: &str) -> Option<EmbeddingKind> {
        match s {
            "word2vec" => Some(EmbeddingKind::Word2vec),
            "glove" => Some(EmbeddingKind::Glove),
            "fasttext" => Some(EmbeddingKind::Fasttext),
            "other" => Some(EmbeddingKind::Other),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Word2vec => "word2vec",
            EmbeddingKind::Glove => "glove",
            EmbeddingKind::Fasttext => "fasttext",
            EmbeddingKind::Other => "other",
        }
    }
}

/// One cell of the GermEval 2017 reference grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCell {
    pub arch: ArchId,
    pub embedding: EmbeddingKind,
    pub split: Split,
    pub task: TaskMode,
    pub f1: f64,
}

macro_rules! cells {
    ($task:expr; $( $arch:ident, $emb:ident => $dev:expr, $syn:expr, $dia:expr );* $(;)?) => {
        &[
            $(
                ReferenceCell { arch: ArchId::$arch, embedding: EmbeddingKind::$emb, split: Split::Dev, task: $task, f1: $dev },
                ReferenceCell { arch: ArchId::$arch, embedding: EmbeddingKind::$emb, split: Split::TestSyn, task: $task, f1: $syn },
                ReferenceCell { arch: ArchId::$arch, embedding: EmbeddingKind::$emb, split: Split::TestDia, task: $task, f1: $dia },
            )*
        ]
    };
}

/// Reference micro-F1 grid for the aspect+sentiment task on GermEval 2017
/// (dev / synchronic test / diachronic test per architecture × embedding).
pub const REFERENCE_ASPECT_SENTIMENT: &[ReferenceCell] = cells![TaskMode::AspectSentiment;
    PipeLstm, Word2vec => 0.350, 0.297, 0.342;
    E2eLstm,  Word2vec => 0.378, 0.315, 0.383;
    PipeCnn,  Word2vec => 0.350, 0.298, 0.343;
    E2eCnn,   Word2vec => 0.400, 0.319, 0.388;
    PipeLstm, Glove    => 0.350, 0.297, 0.342;
    E2eLstm,  Glove    => 0.378, 0.315, 0.384;
    PipeCnn,  Glove    => 0.350, 0.298, 0.342;
    E2eCnn,   Glove    => 0.415, 0.315, 0.390;
    PipeLstm, Fasttext => 0.350, 0.297, 0.342;
    E2eLstm,  Fasttext => 0.378, 0.315, 0.384;
    PipeCnn,  Fasttext => 0.342, 0.295, 0.342;
    E2eCnn,   Fasttext => 0.511, 0.423, 0.465;
];

/// Reference micro-F1 grid for the aspect-only task (end-to-end rows only).
pub const REFERENCE_ASPECT_ONLY: &[ReferenceCell] = cells![TaskMode::AspectOnly;
    E2eLstm, Word2vec => 0.517, 0.442, 0.455;
    E2eCnn,  Word2vec => 0.521, 0.436, 0.470;
    E2eLstm, Glove    => 0.517, 0.442, 0.456;
    E2eCnn,  Glove    => 0.537, 0.457, 0.480;
    E2eLstm, Fasttext => 0.517, 0.442, 0.456;
    E2eCnn,  Fasttext => 0.623, 0.523, 0.557;
];

/// Reference F1 for a grid cell, when the grid has one.
pub fn reference_f1(
    arch: ArchId,
    embedding: EmbeddingKind,
    split: Split,
    task: TaskMode,
) -> Option<f64> {
    REFERENCE_ASPECT_SENTIMENT
        .iter()
        .chain(REFERENCE_ASPECT_ONLY)
        .find(|c| c.arch == arch && c.embedding == embedding && c.split == split && c.task == task)
        .map(|c| c.f1)
}

/// Attaches the reference score and delta to a report when the grid has the
/// matching cell.
pub fn attach_reference(report: &mut EvalReport, arch: ArchId, embedding: EmbeddingKind) {
    if let Some(split) = report.split {
        if let Some(reference) = reference_f1(arch, embedding, split, report.task) {
            report.reference_f1 = Some(reference);
            report.reference_delta = Some(report.f1 - reference);
        }
    }
}

#[cfg(test)]
mod tests;

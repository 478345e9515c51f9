//! Stand-in aspect detector for the pipeline models: one binary logistic
//! classifier per aspect over the mean of the document's token embeddings,
//! with a per-aspect decision threshold tuned on development data. It
//! replaces the external SVM detection system the pipelines would normally
//! consume.

use std::collections::BTreeSet;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AspectCatalog, Document};
use crate::embed::EmbeddingTable;
use crate::tensor::Tensor;

use super::{ModelError, Result};

/// Anything that proposes aspect indices for a document. Implemented by the
/// trained stand-in detector and by test harness detectors with constructed
/// error rates.
pub trait AspectDetector {
    fn detect(
        &self,
        doc_id: &str,
        tokens: &[String],
        table: &EmbeddingTable,
    ) -> Result<BTreeSet<usize>>;
}

/// Per-aspect logistic classifiers over mean token embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub dim: usize,
    pub weights: Vec<Tensor>,
    pub biases: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub trained: bool,
}

/// Mean of the token embedding vectors (zero vector for an empty document).
pub fn mean_embedding(tokens: &[String], table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    if tokens.is_empty() {
        return acc;
    }
    for token in tokens {
        for (a, v) in acc.iter_mut().zip(table.lookup_vec(token)) {
            *a += v;
        }
    }
    let n = tokens.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    acc
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DetectorParams {
    pub fn n_aspects(&self) -> usize {
        self.weights.len()
    }

    /// Detection probabilities per aspect.
    pub fn scores(&self, tokens: &[String], table: &EmbeddingTable) -> Vec<f64> {
        let x = mean_embedding(tokens, table);
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| sigmoid(w.data().iter().zip(&x).map(|(wi, xi)| wi * xi).sum::<f64>() + b))
            .collect()
    }

    /// Aspects whose score strictly exceeds their threshold. Errors when the
    /// detector was never trained.
    pub fn detect_aspects(
        &self,
        tokens: &[String],
        table: &EmbeddingTable,
    ) -> Result<BTreeSet<usize>> {
        if !self.trained {
            return Err(ModelError::UntrainedDetector);
        }
        Ok(self
            .scores(tokens, table)
            .iter()
            .zip(&self.thresholds)
            .enumerate()
            .filter(|(_, (score, threshold))| score > threshold)
            .map(|(aspect, _)| aspect)
            .collect())
    }

    /// Tunes each aspect's threshold to maximize its detection F1 on the
    /// given documents (candidates are midpoints between adjacent distinct
    /// scores plus open ends; the lowest maximizer wins).
    pub fn tune_thresholds(&mut self, docs: &[Document], table: &EmbeddingTable) {
        let all_scores: Vec<Vec<f64>> = docs
            .iter()
            .map(|d| self.scores(&d.tokens, table))
            .collect();
        for aspect in 0..self.n_aspects() {
            let mut scores: Vec<f64> = all_scores.iter().map(|s| s[aspect]).collect();
            let gold: Vec<bool> = docs.iter().map(|d| d.labels.contains_key(&aspect)).collect();
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            scores.dedup();
            let mut candidates = vec![0.0];
            for pair in scores.windows(2) {
                candidates.push((pair[0] + pair[1]) / 2.0);
            }
            candidates.push(1.0);
            let mut best = (0.5, f64::NEG_INFINITY);
            for &threshold in &candidates {
                let mut tp = 0usize;
                let mut fp = 0usize;
                let mut fn_ = 0usize;
                for (scores_d, &is_gold) in all_scores.iter().zip(&gold) {
                    let predicted = scores_d[aspect] > threshold;
                    match (predicted, is_gold) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                let f1 = if tp == 0 {
                    0.0
                } else {
                    2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64)
                };
                if f1 > best.1 {
                    best = (threshold, f1);
                }
            }
            self.thresholds[aspect] = best.0;
        }
    }
}

impl AspectDetector for DetectorParams {
    fn detect(
        &self,
        _doc_id: &str,
        tokens: &[String],
        table: &EmbeddingTable,
    ) -> Result<BTreeSet<usize>> {
        self.detect_aspects(tokens, table)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.5,
            seed: 42,
        }
    }
}

/// Trains the per-aspect logistic classifiers with SGD over shuffled
/// documents. The embedding table is read-only here; the detector is a
/// fixed upstream component, not part of the end-to-end optimization.
pub fn train_detector(
    docs: &[Document],
    table: &EmbeddingTable,
    catalog: &AspectCatalog,
    cfg: &DetectorConfig,
) -> DetectorParams {
    let n_aspects = catalog.len();
    let dim = table.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = vec![vec![0.0; dim]; n_aspects];
    let mut biases = vec![0.0; n_aspects];

    let features: Vec<Vec<f64>> = docs
        .iter()
        .map(|d| mean_embedding(&d.tokens, table))
        .collect();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &features[i];
            for aspect in 0..n_aspects {
                let y = if docs[i].labels.contains_key(&aspect) {
                    1.0
                } else {
                    0.0
                };
                let w = &mut weights[aspect];
                let score: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
                    + biases[aspect];
                let g = sigmoid(score) - y;
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi -= cfg.lr * g * xi;
                }
                biases[aspect] -= cfg.lr * g;
            }
        }
    }

    DetectorParams {
        dim,
        weights: weights
            .into_iter()
            .map(|w| Tensor::from_parts(vec![dim], w))
            .collect(),
        biases,
        thresholds: vec![0.5; n_aspects],
        trained: true,
    }
}

//! Deterministic synthetic datasets for tests and the acceptance suite.
//!
//! The trigger-token corpus encodes each gold (aspect, polarity) pair as a
//! dedicated token (`cue<aspect><polarity>`) mixed into filler text, so a
//! working model can drive training F1 to 1 and a detector can recover
//! aspects from surface forms alone.

use std::collections::{BTreeMap, BTreeSet};

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AspectCatalog, Document, Polarity, Split, DEFAULT_ASPECTS};
use crate::embed::EmbeddingTable;
use crate::model::{AspectDetector, Result as ModelResult};

/// First `n` names of the default catalog.
pub fn catalog(n: usize) -> AspectCatalog {
    assert!(n <= DEFAULT_ASPECTS.len());
    AspectCatalog::new(DEFAULT_ASPECTS[..n].iter().map(|s| s.to_string()).collect()).unwrap()
}

/// The trigger token that encodes one (aspect, polarity) pair.
pub fn trigger_token(aspect: usize, polarity: Polarity) -> String {
    let tag = match polarity {
        Polarity::Positive => "pos",
        Polarity::Negative => "neg",
        Polarity::Neutral => "neu",
    };
    format!("cue{aspect}{tag}")
}

const FILLERS: usize = 12;

/// Every token the trigger corpus can produce, for building an embedding
/// table over the synthetic vocabulary.
pub fn trigger_vocabulary(n_aspects: usize) -> Vec<String> {
    let mut tokens: Vec<String> = (0..FILLERS).map(|i| format!("filler{i:02}")).collect();
    for aspect in 0..n_aspects {
        for polarity in Polarity::ALL {
            tokens.push(trigger_token(aspect, polarity));
        }
    }
    tokens
}

#[derive(Debug, Clone)]
pub struct TriggerConfig {
    pub n_aspects: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub max_aspects_per_doc: usize,
    pub seed: u64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            n_aspects: 4,
            n_train: 32,
            n_dev: 16,
            n_test: 16,
            max_aspects_per_doc: 2,
            seed: 42,
        }
    }
}

fn make_doc(
    id: String,
    split: Split,
    n_aspects: usize,
    max_aspects: usize,
    rng: &mut ChaCha8Rng,
) -> Document {
    let k = rng.gen_range(1..=max_aspects.min(n_aspects));
    let mut aspects: Vec<usize> = (0..n_aspects).collect();
    aspects.shuffle(rng);
    aspects.truncate(k);
    aspects.sort_unstable();

    let mut labels: BTreeMap<usize, Vec<Polarity>> = BTreeMap::new();
    let mut tokens = vec![format!("filler{:02}", rng.gen_range(0..FILLERS))];
    for aspect in aspects {
        let polarity = Polarity::ALL[rng.gen_range(0..3)];
        labels.insert(aspect, vec![polarity]);
        tokens.push(trigger_token(aspect, polarity));
        tokens.push(format!("filler{:02}", rng.gen_range(0..FILLERS)));
    }
    tokens.push(format!("filler{:02}", rng.gen_range(0..FILLERS)));
    Document::new(id, tokens.join(" "), labels, split)
}

/// Generates the synthetic corpus: train, dev and two test splits (the two
/// test splits are drawn from the same process).
pub fn trigger_dataset(cfg: &TriggerConfig) -> (Vec<Document>, AspectCatalog) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::new();
    let sections = [
        (Split::Train, cfg.n_train),
        (Split::Dev, cfg.n_dev),
        (Split::TestSyn, cfg.n_test),
        (Split::TestDia, cfg.n_test),
    ];
    for (split, count) in sections {
        for i in 0..count {
            docs.push(make_doc(
                format!("{}-{i:03}", split.as_str()),
                split,
                cfg.n_aspects,
                cfg.max_aspects_per_doc,
                &mut rng,
            ));
        }
    }
    (docs, catalog(cfg.n_aspects))
}

/// Random embedding table over the trigger vocabulary. `scale` multiplies
/// the default ±1/dim rows; the desk-scale models need inputs around ±0.5
/// to move their logits off uniform quickly.
pub fn trigger_table(n_aspects: usize, dim: usize, seed: u64, scale: f64) -> EmbeddingTable {
    let mut table = EmbeddingTable::random(&trigger_vocabulary(n_aspects), dim, seed);
    for i in 0..table.vocab().len() {
        for v in table.word_row_mut(i) {
            *v *= scale;
        }
    }
    table
}

/// Training-split fixture with exactly `conflicted` conflicted documents
/// out of `total` (the conflicted ones carry two polarities for aspect 0).
pub fn conflict_fixture(total: usize, conflicted: usize) -> Vec<Document> {
    assert!(conflicted <= total);
    let mut docs = Vec::new();
    for i in 0..total - conflicted {
        let mut labels: BTreeMap<usize, Vec<Polarity>> = BTreeMap::new();
        labels.insert(0, vec![Polarity::ALL[i % 3]]);
        docs.push(Document::new(
            format!("clean-{i:03}"),
            format!("filler{:02} text", i % FILLERS),
            labels,
            Split::Train,
        ));
    }
    for i in 0..conflicted {
        let mut labels: BTreeMap<usize, Vec<Polarity>> = BTreeMap::new();
        labels.insert(0, vec![Polarity::Positive, Polarity::Negative]);
        docs.push(Document::new(
            format!("conflict-{i:03}"),
            "widerspruch text".to_string(),
            labels,
            Split::Train,
        ));
    }
    docs
}

/// Detector backed by a precomputed per-document aspect map; documents
/// without an entry get no aspects.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedDetector {
    pub detections: BTreeMap<String, BTreeSet<usize>>,
}

impl AspectDetector for PrecomputedDetector {
    fn detect(
        &self,
        doc_id: &str,
        _tokens: &[String],
        _table: &EmbeddingTable,
    ) -> ModelResult<BTreeSet<usize>> {
        Ok(self.detections.get(doc_id).cloned().unwrap_or_default())
    }
}

impl PrecomputedDetector {
    /// Oracle detector with recall capped at `keep_per_ten / 10` by
    /// construction: gold (doc, aspect) items are enumerated in document
    /// order and exactly ⌊n·keep_per_ten/10⌋ of any n consecutive items are
    /// kept (Bresenham spacing), so the achieved recall never exceeds the
    /// cap. Precision stays 1 (only gold aspects are ever proposed).
    pub fn capped_oracle(docs: &[Document], keep_per_ten: usize) -> Self {
        assert!(keep_per_ten <= 10);
        let mut detections: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        let mut index = 0usize;
        for doc in docs {
            for &aspect in doc.labels.keys() {
                let keep = (index * keep_per_ten) / 10 != ((index + 1) * keep_per_ten) / 10;
                if keep {
                    detections
                        .entry(doc.id.clone())
                        .or_default()
                        .insert(aspect);
                }
                index += 1;
            }
        }
        Self { detections }
    }

    /// Achieved recall of the precomputed detections against the gold
    /// labels of `docs`.
    pub fn recall(&self, docs: &[Document]) -> f64 {
        let mut gold = 0usize;
        let mut hit = 0usize;
        for doc in docs {
            for aspect in doc.labels.keys() {
                gold += 1;
                if self
                    .detections
                    .get(&doc.id)
                    .is_some_and(|s| s.contains(aspect))
                {
                    hit += 1;
                }
            }
        }
        if gold == 0 {
            0.0
        } else {
            hit as f64 / gold as f64
        }
    }
}

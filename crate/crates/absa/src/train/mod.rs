//! Mini-batch SGD training with dev-based early stopping, plus the random
//! hyperparameter search over the learning-rate × batch-size grid.
//!
//! Determinism contract: a fixed seed fixes parameter initialization, epoch
//! shuffles and dropout masks, so two runs produce bit-identical loss
//! sequences and final parameters.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{to_label_vector, AspectCatalog, CorpusError, Document, LabelVector, Split};
use crate::embed::EmbeddingTable;
use crate::eval::{evaluate, gold_maps, micro_f1, EvalError, TaskMode};
use crate::model::{
    e2e_backward, e2e_forward_loss, pipeline_backward, pipeline_forward_loss, ArchId,
    AspectDetector, GradBundle, ModelConfig, ModelError, ModelParams, PredictionSet,
    TrainedModel,
};
use crate::tensor::Mode;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("training document {id:?} still carries conflicting labels; run the conflict filter")]
    UnfilteredConflict { id: String },
    #[error("invalid hyperparameters: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Early-stopping patience: training stops once the dev score has not
/// improved for this many epochs.
pub const EARLY_STOP_PATIENCE: usize = 10;
/// Default epoch cap.
pub const DEFAULT_EPOCH_CAP: usize = 200;
/// Gradient clipping norm applied to the LSTM architectures by default.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Optimization hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub arch: ArchId,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-clipping norm; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub dropout: f64,
    /// Label of the embedding source (file path or "random"), recorded so
    /// runs are reproducible from their config echo.
    pub embedding_source: String,
}

impl HyperConfig {
    /// Per-architecture defaults: SGD at 0.01 with batches of 10 (the
    /// starting point for both model families); the refined CNN setting is
    /// lr 0.03 with batches of 5. LSTMs clip gradients at norm 5, CNNs are
    /// unclipped.
    pub fn defaults(arch: ArchId) -> Self {
        let (lr, batch_size) = if arch.is_lstm() {
            (0.01, 10)
        } else {
            (0.03, 5)
        };
        Self {
            arch,
            lr,
            batch_size,
            epochs: DEFAULT_EPOCH_CAP,
            seed: 42,
            clip_norm: arch.is_lstm().then_some(DEFAULT_CLIP_NORM),
            dropout: 0.5,
            embedding_source: "random".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
    /// Wall-clock seconds for the epoch. Diagnostic only: it is excluded
    /// from the deterministic history CSV.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// Deterministic CSV (epoch, loss, dev_f1): byte-identical across runs
    /// with the same seed and inputs. Wall-clock timing stays out of this
    /// artifact and lives in `EpochStats::seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,dev_f1\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.dev_f1));
        }
        out
    }
}

enum Instance {
    Joint { doc: usize, gold: LabelVector },
    Aspect { doc: usize, aspect: usize, polarity: crate::corpus::Polarity },
}

fn build_instances(
    arch: ArchId,
    docs: &[Document],
    catalog: &AspectCatalog,
) -> Result<Vec<Instance>> {
    let mut instances = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        if doc.has_conflict() {
            return Err(TrainError::UnfilteredConflict { id: doc.id.clone() });
        }
        let labels = doc.label_map(catalog)?;
        if arch.is_pipeline() {
            // One duplicated instance per gold aspect; unlabeled documents
            // contribute nothing to the polarity stage.
            for (aspect, polarity) in labels {
                instances.push(Instance::Aspect {
                    doc: i,
                    aspect,
                    polarity,
                });
            }
        } else {
            instances.push(Instance::Joint {
                doc: i,
                gold: to_label_vector(&labels, catalog)?,
            });
        }
    }
    Ok(instances)
}

fn instance_backward(
    model: &TrainedModel,
    docs: &[Document],
    instance: &Instance,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<(f64, GradBundle)> {
    match (&model.params, instance) {
        (ModelParams::E2eCnn(p), Instance::Joint { doc, gold }) => {
            let fw = e2e_forward_loss(
                p,
                &docs[*doc].tokens,
                gold,
                &model.table,
                &model.config,
                Mode::Train,
                dropout_rng,
            )?;
            Ok((fw.loss_value(), e2e_backward(&fw)?))
        }
        (ModelParams::E2eLstm(p), Instance::Joint { doc, gold }) => {
            let fw = e2e_forward_loss(
                p,
                &docs[*doc].tokens,
                gold,
                &model.table,
                &model.config,
                Mode::Train,
                dropout_rng,
            )?;
            Ok((fw.loss_value(), e2e_backward(&fw)?))
        }
        (
            ModelParams::Pipeline(p),
            Instance::Aspect {
                doc,
                aspect,
                polarity,
            },
        ) => {
            let fw = pipeline_forward_loss(
                p,
                &docs[*doc].tokens,
                *aspect,
                *polarity,
                &model.table,
                &model.config,
                Mode::Train,
                dropout_rng,
            )?;
            Ok((fw.loss_value(), pipeline_backward(&fw)?))
        }
        _ => Err(TrainError::InvalidConfig(
            "instance kind does not match architecture".into(),
        )),
    }
}

fn divergence_or(err: impl Into<TrainError>, epoch: usize, batch: usize) -> TrainError {
    match err.into() {
        TrainError::Tensor(TensorError::NonFinite { .. })
        | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. })) => {
            TrainError::Divergence { epoch, batch }
        }
        other => other,
    }
}

/// Pipeline predictions over a document set using the *gold* aspects,
/// isolating the polarity stage. Used for dev model selection when no
/// detector is supplied.
pub fn pipeline_predict_gold_aspects(
    model: &TrainedModel,
    docs: &[Document],
) -> Result<BTreeMap<String, PredictionSet>> {
    let ModelParams::Pipeline(p) = &model.params else {
        return Err(TrainError::InvalidConfig(
            "gold-aspect prediction needs a pipeline model".into(),
        ));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = BTreeMap::new();
    for doc in docs {
        let (labels, _) = doc.label_map_first_listed();
        let mut set = PredictionSet::default();
        for aspect in labels.keys() {
            let (polarity, confidence) = crate::model::pipeline_classify(
                p,
                &doc.tokens,
                *aspect,
                &model.table,
                &model.config,
                Mode::Infer,
                &mut rng,
            )?;
            set.items.insert(*aspect, (polarity, confidence));
        }
        out.insert(doc.id.clone(), set);
    }
    Ok(out)
}

fn dev_f1(
    model: &TrainedModel,
    dev_docs: &[Document],
    detector: Option<&dyn AspectDetector>,
) -> Result<f64> {
    if dev_docs.is_empty() {
        return Ok(0.0);
    }
    if model.arch.is_pipeline() && detector.is_none() && model.detector.is_none() {
        let predictions = pipeline_predict_gold_aspects(model, dev_docs)?;
        let (gold, _) = gold_maps(dev_docs);
        return Ok(micro_f1(&predictions, &gold, TaskMode::AspectSentiment)?.f1);
    }
    Ok(evaluate(model, dev_docs, TaskMode::AspectSentiment, detector)?.f1)
}

/// Trains the selected architecture with shuffled mini-batch SGD, keeping
/// the parameters of the best dev epoch (early stopping with patience
/// [`EARLY_STOP_PATIENCE`], epoch cap `hyper.epochs`).
///
/// Pipeline architectures train their polarity stage on gold aspects; dev
/// selection composes the given `detector` when one is supplied and falls
/// back to gold aspects otherwise. Batch gradients are averaged; the
/// embedding table is fine-tuned along with the model parameters.
#[allow(clippy::too_many_arguments)]
pub fn train(
    arch: ArchId,
    model_cfg: &ModelConfig,
    catalog: &AspectCatalog,
    table: EmbeddingTable,
    train_docs: &[Document],
    dev_docs: &[Document],
    hyper: &HyperConfig,
    detector: Option<&dyn AspectDetector>,
) -> Result<(TrainedModel, TrainHistory)> {
    hyper.validate()?;
    let mut cfg = model_cfg.clone();
    cfg.dropout = hyper.dropout;
    let mut model = TrainedModel::init(arch, cfg, catalog.clone(), table, hyper.seed)?;
    let mut history = TrainHistory::default();
    let instances = build_instances(arch, train_docs, catalog)?;
    if hyper.epochs == 0 || instances.is_empty() {
        return Ok((model, history));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..instances.len()).collect();

    let mut best: Option<(f64, usize, ModelParams, EmbeddingTable)> = None;
    for epoch in 1..=hyper.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(hyper.batch_size).enumerate() {
            let mut batch_loss = 0.0;
            let mut total: Option<GradBundle> = None;
            for &i in batch {
                // A parameter blow-up surfaces either as a non-finite loss
                // or as a NonFinite kernel error mid-forward; both abort
                // with the divergence diagnostic naming epoch and batch.
                let (loss, bundle) =
                    instance_backward(&model, train_docs, &instances[i], &mut dropout_rng)
                        .map_err(|e| divergence_or(e, epoch, batch_idx))?;
                batch_loss += loss;
                match &mut total {
                    Some(acc) => acc.add_assign(&bundle),
                    None => total = Some(bundle),
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += batch_loss;
            let mut bundle = total.expect("non-empty batch");
            bundle.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = hyper.clip_norm {
                bundle.clip_global(max_norm);
            }
            model
                .params
                .apply_gradients(&bundle.params, hyper.lr)
                .map_err(|e| divergence_or(TrainError::Model(e), epoch, batch_idx))?;
            bundle.embedding.apply(&mut model.table, hyper.lr);
        }
        let train_loss = epoch_loss / instances.len() as f64;
        let f1 = dev_f1(&model, dev_docs, detector)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            dev_f1: f1,
            seconds: started.elapsed().as_secs_f64(),
        });
        let improved = best.as_ref().is_none_or(|(b, ..)| f1 > *b);
        if improved {
            best = Some((f1, epoch, model.params.clone(), model.table.clone()));
            history.best_epoch = Some(epoch);
        } else if let Some((_, best_epoch, ..)) = &best {
            if epoch - best_epoch >= EARLY_STOP_PATIENCE {
                break;
            }
        }
    }

    if let Some((_, _, params, table)) = best {
        model.params = params;
        model.table = table;
    }
    Ok((model, history))
}

// ── random search ─────────────────────────────────────────────────────────

/// Candidate grid for the random search over learning rate and batch
/// size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.001, 0.003, 0.01, 0.03, 0.1],
            batch_sizes: vec![5, 10, 20],
        }
    }
}

impl SearchSpace {
    pub fn cells(&self) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &batch in &self.batch_sizes {
                out.push((lr, batch));
            }
        }
        out
    }
}

/// One trial's log record, emitted as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dev_f1: f64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: HyperConfig,
    pub trials: Vec<TrialRecord>,
    /// Whether the requested trial count exceeded the grid and was clamped.
    pub clamped: bool,
}

/// Samples configurations uniformly without replacement from the product
/// grid, trains each, and returns the configuration with the highest dev F1
/// (ties go to the earlier trial) along with the full per-trial log.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    space: &SearchSpace,
    trials: usize,
    base: &HyperConfig,
    model_cfg: &ModelConfig,
    catalog: &AspectCatalog,
    table: &EmbeddingTable,
    train_docs: &[Document],
    dev_docs: &[Document],
    detector: Option<&dyn AspectDetector>,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(TrainError::InvalidConfig("trials must be ≥ 1".into()));
    }
    let mut cells = space.cells();
    let clamped = trials > cells.len();
    let picked = trials.min(cells.len());
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed.wrapping_add(17));
    cells.shuffle(&mut rng);
    cells.truncate(picked);

    let mut records = Vec::with_capacity(picked);
    let mut best: Option<(usize, f64, HyperConfig)> = None;
    for (trial, (lr, batch_size)) in cells.into_iter().enumerate() {
        let candidate = HyperConfig {
            lr,
            batch_size,
            ..base.clone()
        };
        let (_, history) = train(
            base.arch,
            model_cfg,
            catalog,
            table.clone(),
            train_docs,
            dev_docs,
            &candidate,
            detector,
        )?;
        let dev_f1 = history
            .best_epoch
            .and_then(|e| history.epochs.iter().find(|s| s.epoch == e))
            .map_or(0.0, |s| s.dev_f1);
        records.push(TrialRecord {
            trial,
            lr,
            batch_size,
            dev_f1,
            epochs_run: history.epochs.len(),
            best_epoch: history.best_epoch,
        });
        if best.as_ref().is_none_or(|(_, f, _)| dev_f1 > *f) {
            best = Some((trial, dev_f1, candidate));
        }
    }
    let (_, _, best) = best.expect("at least one trial ran");
    Ok(SearchOutcome {
        best,
        trials: records,
        clamped,
    })
}

/// Convenience used by fixtures and the CLI: splits a mixed document list
/// by split tag.
pub fn split_documents(
    docs: Vec<Document>,
) -> (Vec<Document>, Vec<Document>, Vec<Document>, Vec<Document>) {
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut test_syn = Vec::new();
    let mut test_dia = Vec::new();
    for doc in docs {
        match doc.split {
            Split::Train => train.push(doc),
            Split::Dev => dev.push(doc),
            Split::TestSyn => test_syn.push(doc),
            Split::TestDia => test_dia.push(doc),
        }
    }
    (train, dev, test_syn, test_dia)
}

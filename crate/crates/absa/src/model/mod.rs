//! The four classifier architectures: end-to-end CNN and BiLSTM (one 4-way
//! head per aspect over a shared document encoding) and their pipeline
//! counterparts (aspect detection upstream, a single 3-way polarity head
//! over the encoding concatenated with an aspect embedding), plus the
//! stand-in aspect detector the pipelines consume.

mod detector;
mod e2e;
mod encoder;
pub mod gradcheck;
mod pipeline;

pub use detector::{
    mean_embedding, train_detector, AspectDetector, DetectorConfig, DetectorParams,
};
pub use e2e::{e2e_backward, e2e_forward, e2e_forward_loss, E2eForward, E2eParams};
pub use encoder::{
    bilstm_encode, cnn_encode, CnnEncoderParams, EncoderParams, LstmDirParams, LstmEncoderParams,
};
pub use pipeline::{
    pipeline_backward, pipeline_classify, pipeline_forward_loss, PipelineForward, PipelineParams,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AspectCatalog, LabelVector, Polarity};
use crate::embed::EmbeddingTable;
use crate::tensor::{self, GradTape, Mode, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("detector has not been trained")]
    UntrainedDetector,
    #[error("pipeline model requires a detector")]
    MissingDetector,
    #[error("model file: {0}")]
    Format(String),
    #[error("refusing to load: {0}")]
    CatalogMismatch(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Number of joint classes per aspect: N/A, positive, negative, neutral.
pub const JOINT_CLASSES: usize = 4;
/// Pipeline polarity classes, in tie-break order.
pub const PIPELINE_CLASSES: usize = 3;

/// Documented class orders, embedded in model files and validated on load.
pub const JOINT_CLASS_ORDER: [&str; 4] = ["n/a", "positive", "negative", "neutral"];
pub const PIPELINE_CLASS_ORDER: [&str; 3] = ["positive", "negative", "neutral"];

/// Architecture identifier, the closed set of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchId {
    E2eCnn,
    E2eLstm,
    PipeCnn,
    PipeLstm,
}

impl ArchId {
    pub const ALL: [ArchId; 4] = [
        ArchId::E2eCnn,
        ArchId::E2eLstm,
        ArchId::PipeCnn,
        ArchId::PipeLstm,
    ];

    pub fn parse(s: &str) -> Option<ArchId> {
        match s {
            "e2e-cnn" => Some(ArchId::E2eCnn),
            "e2e-lstm" => Some(ArchId::E2eLstm),
            "pipe-cnn" => Some(ArchId::PipeCnn),
            "pipe-lstm" => Some(ArchId::PipeLstm),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::E2eCnn => "e2e-cnn",
            ArchId::E2eLstm => "e2e-lstm",
            ArchId::PipeCnn => "pipe-cnn",
            ArchId::PipeLstm => "pipe-lstm",
        }
    }

    pub fn is_pipeline(self) -> bool {
        matches!(self, ArchId::PipeCnn | ArchId::PipeLstm)
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, ArchId::E2eLstm | ArchId::PipeLstm)
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structural hyperparameters shared by all architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub filters_per_width: usize,
    pub filter_widths: Vec<usize>,
    pub hidden: usize,
    pub aspect_embed_dim: usize,
    pub dropout: f64,
    pub n_aspects: usize,
}

impl ModelConfig {
    /// Full-scale defaults: 300-dim embeddings, 300 filters of widths
    /// 3/4/5, hidden size 200 per direction, aspect embeddings of size 15,
    /// dropout 0.5.
    pub fn defaults(n_aspects: usize) -> Self {
        Self {
            embed_dim: 300,
            filters_per_width: 300,
            filter_widths: vec![3, 4, 5],
            hidden: 200,
            aspect_embed_dim: 15,
            dropout: 0.5,
            n_aspects,
        }
    }

    /// Pooled CNN feature dimension (widths × filters per width).
    pub fn pooled_dim(&self) -> usize {
        self.filter_widths.len() * self.filters_per_width
    }
}

/// Where an embedded row came from, for scattering gradients back into the
/// table. `Fixed` rows (padding, hashed fallbacks) receive no updates.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenSource {
    Word(usize),
    Buckets(Vec<usize>),
    Fixed,
}

// ── per-aspect heads ──────────────────────────────────────────────────────

/// Independent linear heads, one per aspect: `W^(a)` of shape
/// `[classes, input_dim]` and bias `b^(a)` of shape `[classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Heads {
    pub fn init<R: Rng>(n_aspects: usize, classes: usize, input_dim: usize, rng: &mut R) -> Self {
        let weights = (0..n_aspects)
            .map(|_| Tensor::uniform(vec![classes, input_dim], -0.05, 0.05, rng))
            .collect();
        let biases = (0..n_aspects)
            .map(|_| Tensor::zeros(vec![classes]))
            .collect();
        Self { weights, biases }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (a, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("head.{a}.weight"), w));
            out.push((format!("head.{a}.bias"), b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub(crate) fn register(&self, tape: &mut GradTape) -> (Vec<(Var, Var)>, Vec<Var>) {
        let mut pairs = Vec::new();
        let mut flat = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            pairs.push((wv, bv));
            flat.push(wv);
            flat.push(bv);
        }
        (pairs, flat)
    }
}

/// ŷ^(a) = softmax(W^(a)·v + b^(a)) for every aspect head.
pub fn aspect_scores(v: &Tensor, heads: &Heads) -> Result<Vec<Tensor>> {
    heads
        .weights
        .iter()
        .zip(&heads.biases)
        .map(|(w, b)| {
            let logits = tensor::matvec(w, v)?;
            let shifted = Tensor::from_parts(
                logits.shape().to_vec(),
                logits
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| x + y)
                    .collect(),
            );
            Ok(tensor::softmax(&shifted))
        })
        .collect()
}

pub(crate) fn heads_tape(
    tape: &mut GradTape,
    v: Var,
    head_vars: &[(Var, Var)],
) -> Result<Vec<Var>> {
    head_vars
        .iter()
        .map(|&(w, b)| {
            let logits = tape.matvec(w, v)?;
            let logits = tape.add(logits, b)?;
            Ok(tape.softmax(logits)?)
        })
        .collect()
}

/// Argmax with ties broken toward the lowest class index (so a tie that
/// involves N/A predicts absence).
pub fn argmax_low_tie(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-aspect argmax over the 4-way distributions.
pub fn decode(dists: &[Tensor]) -> LabelVector {
    LabelVector(
        dists
            .iter()
            .map(|d| argmax_low_tie(d.data()) as u8)
            .collect(),
    )
}

pub(crate) fn one_hot(classes: usize, index: u8) -> Tensor {
    let mut data = vec![0.0; classes];
    data[index as usize] = 1.0;
    Tensor::from_parts(vec![classes], data)
}

/// Cross entropy summed over all aspects against the joint label vector.
pub fn joint_loss(dists: &[Tensor], gold: &LabelVector) -> Result<f64> {
    if dists.len() != gold.len() {
        return Err(ModelError::Invalid(format!(
            "{} distributions vs {} gold labels",
            dists.len(),
            gold.len()
        )));
    }
    let mut total = 0.0;
    for (dist, &z) in dists.iter().zip(&gold.0) {
        total += tensor::cross_entropy(&one_hot(JOINT_CLASSES, z), dist)?;
    }
    Ok(total)
}

pub(crate) fn joint_loss_tape(
    tape: &mut GradTape,
    dists: &[Var],
    gold: &LabelVector,
) -> Result<Var> {
    let terms = dists
        .iter()
        .zip(&gold.0)
        .map(|(&d, &z)| Ok(tape.cross_entropy(one_hot(JOINT_CLASSES, z), d)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.sum_scalars(&terms)?)
}

// ── predictions ───────────────────────────────────────────────────────────

/// Decoded model output for one document: aspect index → (polarity,
/// confidence), where confidence is the winning class's softmax probability.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    pub items: BTreeMap<usize, (Polarity, f64)>,
}

impl PredictionSet {
    pub fn label_vector(&self, n_aspects: usize) -> LabelVector {
        let mut z = vec![0u8; n_aspects];
        for (&aspect, &(polarity, _)) in &self.items {
            z[aspect] = polarity.class_index();
        }
        LabelVector(z)
    }

    /// Builds from joint 4-way distributions via argmax decoding.
    pub fn from_distributions(dists: &[Tensor]) -> Self {
        let mut items = BTreeMap::new();
        for (aspect, dist) in dists.iter().enumerate() {
            let class = argmax_low_tie(dist.data());
            if let Some(Some(polarity)) = Polarity::from_class_index(class as u8) {
                items.insert(aspect, (polarity, dist.data()[class]));
            }
        }
        Self { items }
    }
}

// ── gradients ─────────────────────────────────────────────────────────────

/// Sparse gradients for the embedding table: only touched word rows and
/// buckets appear; everything else is exactly zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingGrad {
    pub words: BTreeMap<usize, Vec<f64>>,
    pub buckets: BTreeMap<usize, Vec<f64>>,
}

impl EmbeddingGrad {
    /// Scatters the `[L, D]` embedding-matrix gradient back onto the table:
    /// the full row gradient for word rows, split equally over the
    /// contributing buckets (1/K each, K = n-gram count) for composed rows.
    pub(crate) fn scatter(&mut self, grad: &Tensor, sources: &[TokenSource]) {
        let dim = grad.cols();
        for (row, source) in sources.iter().enumerate() {
            let g = grad.row(row);
            match source {
                TokenSource::Word(index) => {
                    let acc = self.words.entry(*index).or_insert_with(|| vec![0.0; dim]);
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                TokenSource::Buckets(buckets) => {
                    let k = buckets.len() as f64;
                    for &b in buckets {
                        let acc = self.buckets.entry(b).or_insert_with(|| vec![0.0; dim]);
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a += v / k;
                        }
                    }
                }
                TokenSource::Fixed => {}
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.buckets.is_empty()
    }

    fn add_assign(&mut self, other: &EmbeddingGrad) {
        for (idx, g) in &other.words {
            let acc = self.words.entry(*idx).or_insert_with(|| vec![0.0; g.len()]);
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        for (idx, g) in &other.buckets {
            let acc = self
                .buckets
                .entry(*idx)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for g in self.words.values_mut().chain(self.buckets.values_mut()) {
            for v in g {
                *v *= s;
            }
        }
    }

    /// Applies the SGD step to the touched table rows.
    pub fn apply(&self, table: &mut EmbeddingTable, lr: f64) {
        for (&idx, g) in &self.words {
            for (w, v) in table.word_row_mut(idx).iter_mut().zip(g) {
                *w -= lr * v;
            }
        }
        for (&idx, g) in &self.buckets {
            for (w, v) in table.bucket_row_mut(idx).iter_mut().zip(g) {
                *w -= lr * v;
            }
        }
    }
}

/// All gradients of one backward pass: dense model parameters (in
/// `ModelParams::params` order) plus the sparse embedding gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub params: Vec<Tensor>,
    pub embedding: EmbeddingGrad,
}

impl GradBundle {
    pub fn add_assign(&mut self, other: &GradBundle) {
        debug_assert_eq!(self.params.len(), other.params.len());
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        self.embedding.add_assign(&other.embedding);
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.params {
            for v in t.data_mut() {
                *v *= s;
            }
        }
        self.embedding.scale(s);
    }

    /// Global-norm clipping across every gradient in the bundle, embedding
    /// rows included. Returns the pre-clip norm.
    pub fn clip_global(&mut self, max_norm: f64) -> f64 {
        let mut slices: Vec<&mut [f64]> = self
            .params
            .iter_mut()
            .map(|t| t.data_mut())
            .collect();
        for g in self
            .embedding
            .words
            .values_mut()
            .chain(self.embedding.buckets.values_mut())
        {
            slices.push(g.as_mut_slice());
        }
        tensor::clip_slices(&mut slices, max_norm)
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq: f64 = self
            .params
            .iter()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        sq += self
            .embedding
            .words
            .values()
            .chain(self.embedding.buckets.values())
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>();
        sq.sqrt()
    }
}

/// Extracts per-parameter gradients (zeros for parameters the loss never
/// touched) and scatters the embedding-matrix gradient.
pub(crate) fn collect_bundle(
    tape: &GradTape,
    grads: &mut crate::tensor::Gradients,
    param_vars: &[Var],
    embed_var: Var,
    sources: &[TokenSource],
) -> GradBundle {
    let params = param_vars
        .iter()
        .map(|&v| {
            grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
        })
        .collect();
    let mut embedding = EmbeddingGrad::default();
    if let Some(g) = grads.get(embed_var) {
        embedding.scatter(g, sources);
    }
    GradBundle { params, embedding }
}

// ── the trained model container ───────────────────────────────────────────

/// Typed parameter sets of the four architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    E2eCnn(E2eParams<CnnEncoderParams>),
    E2eLstm(E2eParams<LstmEncoderParams>),
    Pipeline(PipelineParams),
}

impl ModelParams {
    /// Fresh parameters for an architecture: weights uniform in ±0.05,
    /// biases zero, deterministic under the seed.
    pub fn init(arch: ArchId, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match arch {
            ArchId::E2eCnn => ModelParams::E2eCnn(E2eParams::init_cnn(cfg, &mut rng)),
            ArchId::E2eLstm => ModelParams::E2eLstm(E2eParams::init_lstm(cfg, &mut rng)),
            ArchId::PipeCnn => ModelParams::Pipeline(PipelineParams::init(
                EncoderParams::Cnn(CnnEncoderParams::init(cfg, &mut rng)),
                cfg,
                &mut rng,
            )),
            ArchId::PipeLstm => ModelParams::Pipeline(PipelineParams::init(
                EncoderParams::Lstm(LstmEncoderParams::init(cfg, &mut rng)),
                cfg,
                &mut rng,
            )),
        }
    }

    /// Named parameters in the documented serialization/update order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            ModelParams::E2eCnn(p) => p.params(),
            ModelParams::E2eLstm(p) => p.params(),
            ModelParams::Pipeline(p) => p.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            ModelParams::E2eCnn(p) => p.params_mut(),
            ModelParams::E2eLstm(p) => p.params_mut(),
            ModelParams::Pipeline(p) => p.params_mut(),
        }
    }

    /// Applies one SGD step from a gradient bundle (dense parameters only;
    /// the caller applies `bundle.embedding` to its table).
    pub fn apply_gradients(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        let mut targets = self.params_mut();
        if targets.len() != grads.len() {
            return Err(ModelError::Invalid(format!(
                "gradient bundle has {} tensors, model has {}",
                grads.len(),
                targets.len()
            )));
        }
        for (param, grad) in targets.iter_mut().zip(grads) {
            tensor::sgd_step_in_place(param, grad, lr)?;
        }
        Ok(())
    }
}

/// A trained (or freshly initialized) model with everything inference
/// needs: parameters, the fine-tuned embedding table, the catalog, and for
/// pipeline architectures the aspect detector.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub arch: ArchId,
    pub config: ModelConfig,
    pub catalog: AspectCatalog,
    pub params: ModelParams,
    pub table: EmbeddingTable,
    pub detector: Option<DetectorParams>,
}

impl TrainedModel {
    pub fn init(
        arch: ArchId,
        config: ModelConfig,
        catalog: AspectCatalog,
        table: EmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        if config.n_aspects != catalog.len() {
            return Err(ModelError::Invalid(format!(
                "config expects {} aspects, catalog has {}",
                config.n_aspects,
                catalog.len()
            )));
        }
        if config.embed_dim != table.dim() {
            return Err(ModelError::Invalid(format!(
                "config embed_dim {} vs table dim {}",
                config.embed_dim,
                table.dim()
            )));
        }
        let params = ModelParams::init(arch, &config, seed);
        Ok(Self {
            arch,
            config,
            catalog,
            params,
            table,
            detector: None,
        })
    }

    /// Joint 4-way distributions for a document (end-to-end architectures).
    pub fn distributions(&self, tokens: &[String]) -> Result<Vec<Tensor>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match &self.params {
            ModelParams::E2eCnn(p) => e2e::e2e_forward(
                p,
                tokens,
                &self.table,
                &self.config,
                Mode::Infer,
                &mut rng,
            ),
            ModelParams::E2eLstm(p) => e2e::e2e_forward(
                p,
                tokens,
                &self.table,
                &self.config,
                Mode::Infer,
                &mut rng,
            ),
            ModelParams::Pipeline(_) => Err(ModelError::Invalid(
                "pipeline models have no joint distributions; use predict".into(),
            )),
        }
    }

    /// Inference for one document. Pipeline architectures consume the given
    /// detector, falling back to the model's own; end-to-end architectures
    /// decode their joint output directly.
    pub fn predict(
        &self,
        doc_id: &str,
        tokens: &[String],
        detector: Option<&dyn AspectDetector>,
    ) -> Result<PredictionSet> {
        match &self.params {
            ModelParams::E2eCnn(_) | ModelParams::E2eLstm(_) => {
                let dists = self.distributions(tokens)?;
                Ok(PredictionSet::from_distributions(&dists))
            }
            ModelParams::Pipeline(p) => {
                let own = self.detector.as_ref().map(|d| d as &dyn AspectDetector);
                let det = detector.or(own).ok_or(ModelError::MissingDetector)?;
                let aspects = det.detect(doc_id, tokens, &self.table)?;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let mut items = BTreeMap::new();
                for aspect in aspects {
                    let (polarity, confidence) = pipeline::pipeline_classify(
                        p,
                        tokens,
                        aspect,
                        &self.table,
                        &self.config,
                        Mode::Infer,
                        &mut rng,
                    )?;
                    items.insert(aspect, (polarity, confidence));
                }
                Ok(PredictionSet { items })
            }
        }
    }

    /// Serializes the full model (versioned JSON container).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            arch: self.arch,
            config: self.config.clone(),
            catalog: self.catalog.names().to_vec(),
            catalog_hash: format!("{:016x}", self.catalog.hash()),
            class_order: JOINT_CLASS_ORDER.iter().map(|s| s.to_string()).collect(),
            pipeline_class_order: PIPELINE_CLASS_ORDER.iter().map(|s| s.to_string()).collect(),
            params: self.params.clone(),
            embedding: self.table.clone(),
            detector: self.detector.clone(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Loads and validates a model file. When `expected_catalog` is given,
    /// loading is refused unless the stored catalog matches it exactly.
    pub fn load(path: &Path, expected_catalog: Option<&AspectCatalog>) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&json)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported format version {} (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.class_order != JOINT_CLASS_ORDER {
            return Err(ModelError::Format(format!(
                "unexpected class order {:?}",
                file.class_order
            )));
        }
        if file.pipeline_class_order != PIPELINE_CLASS_ORDER {
            return Err(ModelError::Format(format!(
                "unexpected pipeline class order {:?}",
                file.pipeline_class_order
            )));
        }
        let catalog = AspectCatalog::new(file.catalog.clone())
            .map_err(|e| ModelError::Format(format!("invalid stored catalog: {e}")))?;
        let stored_hash = format!("{:016x}", catalog.hash());
        if stored_hash != file.catalog_hash {
            return Err(ModelError::CatalogMismatch(format!(
                "stored catalog hash {} does not match recomputed {stored_hash}",
                file.catalog_hash
            )));
        }
        if let Some(expected) = expected_catalog {
            if expected.names() != catalog.names() {
                return Err(ModelError::CatalogMismatch(format!(
                    "model was trained against a different aspect catalog \
                     (model hash {stored_hash}, expected {:016x})",
                    expected.hash()
                )));
            }
        }
        if file.config.n_aspects != catalog.len() {
            return Err(ModelError::Format(format!(
                "config expects {} aspects, stored catalog has {}",
                file.config.n_aspects,
                catalog.len()
            )));
        }
        let mut table = file.embedding;
        table.rebuild_index();
        Ok(Self {
            arch: file.arch,
            config: file.config,
            catalog,
            params: file.params,
            table,
            detector: file.detector,
        })
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    arch: ArchId,
    config: ModelConfig,
    catalog: Vec<String>,
    catalog_hash: String,
    class_order: Vec<String>,
    pipeline_class_order: Vec<String>,
    params: ModelParams,
    embedding: EmbeddingTable,
    detector: Option<DetectorParams>,
}

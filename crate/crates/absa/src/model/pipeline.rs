//! Pipeline models: the document is re-encoded once per detected aspect,
//! the encoding is concatenated with a learned aspect embedding of size 15,
//! and a single 3-way head assigns the polarity. Aspect detection happens
//! upstream (see [`super::detector`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Polarity;
use crate::embed::EmbeddingTable;
use crate::tensor::{GradTape, Mode, Tensor, Var};

use super::encoder::{build_embed_matrix, encode_tape, min_len, register_encoder, EncoderParams};
use super::{
    argmax_low_tie, collect_bundle, one_hot, GradBundle, ModelConfig, ModelError, Result,
    TokenSource, PIPELINE_CLASSES,
};

/// Encoder, aspect embedding table (`[|A|, 15]`) and the shared 3-way
/// polarity head over `[encoding ∥ aspect embedding]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub encoder: EncoderParams,
    pub aspect_embed: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl PipelineParams {
    pub fn init<R: Rng>(encoder: EncoderParams, cfg: &ModelConfig, rng: &mut R) -> Self {
        let enc_dim = encoder.output_dim(cfg);
        let aspect_embed = Tensor::uniform(
            vec![cfg.n_aspects, cfg.aspect_embed_dim],
            -0.05,
            0.05,
            rng,
        );
        let head_w = Tensor::uniform(
            vec![PIPELINE_CLASSES, enc_dim + cfg.aspect_embed_dim],
            -0.05,
            0.05,
            rng,
        );
        let head_b = Tensor::zeros(vec![PIPELINE_CLASSES]);
        Self {
            encoder,
            aspect_embed,
            head_w,
            head_b,
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.params();
        out.push(("aspect_embed".to_string(), &self.aspect_embed));
        out.push(("head.weight".to_string(), &self.head_w));
        out.push(("head.bias".to_string(), &self.head_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.push(&mut self.aspect_embed);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }
}

/// A recorded pipeline forward pass for one (document, aspect) instance.
pub struct PipelineForward {
    pub tape: GradTape,
    pub loss: Var,
    pub dist: Var,
    pub(crate) param_vars: Vec<Var>,
    pub(crate) embed_var: Var,
    pub(crate) sources: Vec<TokenSource>,
}

impl PipelineForward {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item().expect("loss is scalar")
    }

    pub fn distribution(&self) -> Tensor {
        self.tape.value(self.dist).clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_internal<R: Rng>(
    params: &PipelineParams,
    tokens: &[String],
    aspect: usize,
    gold: Option<Polarity>,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<PipelineForward> {
    if aspect >= cfg.n_aspects {
        return Err(ModelError::Invalid(format!(
            "aspect index {aspect} out of range for {} aspects",
            cfg.n_aspects
        )));
    }
    let mut tape = GradTape::new();
    let (matrix, sources) = build_embed_matrix(tokens, table, min_len(&params.encoder, cfg));
    let embed_var = tape.leaf(matrix);
    let enc_vars = register_encoder(&params.encoder, &mut tape);
    let aspect_var = tape.leaf(params.aspect_embed.clone());
    let head_w = tape.leaf(params.head_w.clone());
    let head_b = tape.leaf(params.head_b.clone());
    let mut param_vars = enc_vars.flat().to_vec();
    param_vars.extend([aspect_var, head_w, head_b]);

    let v = encode_tape(&mut tape, embed_var, &enc_vars, cfg, mode, rng)?;
    let asp = tape.row(aspect_var, aspect)?;
    let joined = tape.concat(&[v, asp])?;
    let logits = tape.matvec(head_w, joined)?;
    let logits = tape.add(logits, head_b)?;
    let dist = tape.softmax(logits)?;

    // The 3-way loss indexes polarities as 0/1/2 (positive/negative/neutral).
    let loss = match gold {
        Some(p) => tape.cross_entropy(one_hot(PIPELINE_CLASSES, p.class_index() - 1), dist)?,
        None => tape.sum_scalars(&[])?,
    };
    Ok(PipelineForward {
        tape,
        loss,
        dist,
        param_vars,
        embed_var,
        sources,
    })
}

/// Forward with the 3-way cross-entropy loss for one gold-labelled
/// (document, aspect) training instance.
#[allow(clippy::too_many_arguments)]
pub fn pipeline_forward_loss<R: Rng>(
    params: &PipelineParams,
    tokens: &[String],
    aspect: usize,
    gold: Polarity,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<PipelineForward> {
    forward_internal(params, tokens, aspect, Some(gold), table, cfg, mode, rng)
}

/// Classifies one (document, aspect) pair: 3-way softmax, argmax with ties
/// broken toward the lowest index (positive < negative < neutral).
pub fn pipeline_classify<R: Rng>(
    params: &PipelineParams,
    tokens: &[String],
    aspect: usize,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Polarity, f64)> {
    let fw = forward_internal(params, tokens, aspect, None, table, cfg, mode, rng)?;
    let dist = fw.tape.value(fw.dist);
    let class = argmax_low_tie(dist.data());
    let polarity = Polarity::from_class_index(class as u8 + 1)
        .flatten()
        .expect("3-way class index maps to a polarity");
    Ok((polarity, dist.data()[class]))
}

/// Analytic gradients of the recorded instance loss.
pub fn pipeline_backward(fw: &PipelineForward) -> Result<GradBundle> {
    let mut grads = fw.tape.backward(fw.loss)?;
    Ok(collect_bundle(
        &fw.tape,
        &mut grads,
        &fw.param_vars,
        fw.embed_var,
        &fw.sources,
    ))
}

//! End-to-end models: one shared document encoding feeding an independent
//! 4-way head per aspect, trained with cross entropy summed over aspects so
//! aspect detection and polarity are one decision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelVector;
use crate::embed::EmbeddingTable;
use crate::tensor::{GradTape, Mode, Tensor, Var};

use super::encoder::{
    build_embed_matrix, cnn_encode_tape, lstm_encode_tape, CnnEncoderParams, LstmEncoderParams,
};
use super::{
    collect_bundle, heads_tape, joint_loss_tape, GradBundle, Heads, ModelConfig, ModelError,
    Result, TokenSource, JOINT_CLASSES,
};

/// Encoder plus per-aspect heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eParams<E> {
    pub encoder: E,
    pub heads: Heads,
}

impl E2eParams<CnnEncoderParams> {
    pub fn init_cnn<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let encoder = CnnEncoderParams::init(cfg, rng);
        let heads = Heads::init(cfg.n_aspects, JOINT_CLASSES, cfg.pooled_dim(), rng);
        Self { encoder, heads }
    }
}

impl E2eParams<LstmEncoderParams> {
    pub fn init_lstm<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let encoder = LstmEncoderParams::init(cfg, rng);
        let heads = Heads::init(cfg.n_aspects, JOINT_CLASSES, 2 * cfg.hidden, rng);
        Self { encoder, heads }
    }
}

/// Either end-to-end encoder type, for the generic forward below.
pub trait E2eEncoder {
    fn min_len(&self, cfg: &ModelConfig) -> usize;
    fn register_and_encode<R: Rng>(
        &self,
        tape: &mut GradTape,
        embed: Var,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>)>;
}

impl E2eEncoder for CnnEncoderParams {
    fn min_len(&self, cfg: &ModelConfig) -> usize {
        cfg.filter_widths.iter().copied().max().unwrap_or(1)
    }

    fn register_and_encode<R: Rng>(
        &self,
        tape: &mut GradTape,
        embed: Var,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>)> {
        let vars = self.register(tape);
        let v = cnn_encode_tape(tape, embed, &vars, cfg, mode, rng)?;
        Ok((v, vars.flat))
    }
}

impl E2eEncoder for LstmEncoderParams {
    fn min_len(&self, _cfg: &ModelConfig) -> usize {
        1
    }

    fn register_and_encode<R: Rng>(
        &self,
        tape: &mut GradTape,
        embed: Var,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>)> {
        let vars = self.register(tape);
        let v = lstm_encode_tape(tape, embed, &vars, cfg, mode, rng)?;
        Ok((v, vars.flat))
    }
}

/// A recorded end-to-end forward pass, ready for decoding or backward.
pub struct E2eForward {
    pub tape: GradTape,
    pub loss: Var,
    pub dists: Vec<Var>,
    pub(crate) param_vars: Vec<Var>,
    pub(crate) embed_var: Var,
    pub(crate) sources: Vec<TokenSource>,
}

impl E2eForward {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item().expect("loss is scalar")
    }

    pub fn distributions(&self) -> Vec<Tensor> {
        self.dists
            .iter()
            .map(|&d| self.tape.value(d).clone())
            .collect()
    }
}

/// Forward pass with the joint loss recorded on a tape. Dropout masks are
/// drawn from `rng`, so freezing the rng seed freezes the masks.
pub fn e2e_forward_loss<E: E2eEncoder, R: Rng>(
    params: &E2eParams<E>,
    tokens: &[String],
    gold: &LabelVector,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<E2eForward> {
    if gold.len() != params.heads.len() {
        return Err(ModelError::Invalid(format!(
            "gold vector has {} entries, model has {} heads",
            gold.len(),
            params.heads.len()
        )));
    }
    let mut tape = GradTape::new();
    let (matrix, sources) = build_embed_matrix(tokens, table, params.encoder.min_len(cfg));
    let embed_var = tape.leaf(matrix);
    let (v, mut param_vars) = params
        .encoder
        .register_and_encode(&mut tape, embed_var, cfg, mode, rng)?;
    let (head_vars, head_flat) = params.heads.register(&mut tape);
    param_vars.extend(head_flat);
    let dists = heads_tape(&mut tape, v, &head_vars)?;
    let loss = joint_loss_tape(&mut tape, &dists, gold)?;
    Ok(E2eForward {
        tape,
        loss,
        dists,
        param_vars,
        embed_var,
        sources,
    })
}

/// Inference-style forward: just the per-aspect distributions.
pub fn e2e_forward<E: E2eEncoder, R: Rng>(
    params: &E2eParams<E>,
    tokens: &[String],
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    let gold = LabelVector(vec![0; params.heads.len()]);
    let fw = e2e_forward_loss(params, tokens, &gold, table, cfg, mode, rng)?;
    Ok(fw.distributions())
}

/// Analytic gradients of the recorded joint loss for every parameter and
/// every touched embedding row.
pub fn e2e_backward(fw: &E2eForward) -> Result<GradBundle> {
    let mut grads = fw.tape.backward(fw.loss)?;
    Ok(collect_bundle(
        &fw.tape,
        &mut grads,
        &fw.param_vars,
        fw.embed_var,
        &fw.sources,
    ))
}

impl<E> E2eParams<E>
where
    E: E2eEncoderParamsList,
{
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.encoder_params();
        out.extend(self.heads.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.encoder_params_mut();
        out.extend(self.heads.params_mut());
        out
    }
}

/// Name/order plumbing shared by the two encoder types.
pub trait E2eEncoderParamsList {
    fn encoder_params(&self) -> Vec<(String, &Tensor)>;
    fn encoder_params_mut(&mut self) -> Vec<&mut Tensor>;
}

impl E2eEncoderParamsList for CnnEncoderParams {
    fn encoder_params(&self) -> Vec<(String, &Tensor)> {
        self.params()
    }
    fn encoder_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_mut()
    }
}

impl E2eEncoderParamsList for LstmEncoderParams {
    fn encoder_params(&self) -> Vec<(String, &Tensor)> {
        self.params()
    }
    fn encoder_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_mut()
    }
}

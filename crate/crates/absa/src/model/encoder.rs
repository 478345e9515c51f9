//! Document encoders: the multi-width convolutional encoder with
//! max-over-time pooling and the bidirectional LSTM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingTable, TokenVec};
use crate::tensor::{GradTape, Mode, Tensor, Var};

use super::{ModelConfig, Result, TokenSource};

/// Convolution filter banks: one `[width·D, F]` matrix and one `[F]` bias
/// per filter width, so each filter is a `width × D` window and the
/// convolution over all positions is a single matrix product against the
/// unfolded input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnEncoderParams {
    pub filters: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl CnnEncoderParams {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let filters = cfg
            .filter_widths
            .iter()
            .map(|w| {
                Tensor::uniform(
                    vec![w * cfg.embed_dim, cfg.filters_per_width],
                    -0.05,
                    0.05,
                    rng,
                )
            })
            .collect();
        let biases = cfg
            .filter_widths
            .iter()
            .map(|_| Tensor::zeros(vec![cfg.filters_per_width]))
            .collect();
        Self { filters, biases }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (f, b)) in self.filters.iter().zip(&self.biases).enumerate() {
            out.push((format!("encoder.filters.{i}"), f));
            out.push((format!("encoder.bias.{i}"), b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (f, b) in self.filters.iter_mut().zip(self.biases.iter_mut()) {
            out.push(f);
            out.push(b);
        }
        out
    }

    pub(crate) fn register(&self, tape: &mut GradTape) -> CnnVars {
        let mut flat = Vec::new();
        let mut filters = Vec::new();
        let mut biases = Vec::new();
        for (f, b) in self.filters.iter().zip(&self.biases) {
            let fv = tape.leaf(f.clone());
            let bv = tape.leaf(b.clone());
            filters.push(fv);
            biases.push(bv);
            flat.push(fv);
            flat.push(bv);
        }
        CnnVars {
            filters,
            biases,
            flat,
        }
    }
}

pub(crate) struct CnnVars {
    pub filters: Vec<Var>,
    pub biases: Vec<Var>,
    pub flat: Vec<Var>,
}

/// One direction of the LSTM: gate weights over the input (`w`), the
/// recurrent state (`u`) and biases (`b`), gate order [input, forget,
/// candidate, output].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirParams {
    pub w: Vec<Tensor>,
    pub u: Vec<Tensor>,
    pub b: Vec<Tensor>,
}

pub(crate) const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

impl LstmDirParams {
    fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let w = (0..4)
            .map(|_| Tensor::uniform(vec![h, cfg.embed_dim], -0.05, 0.05, rng))
            .collect();
        let u = (0..4)
            .map(|_| Tensor::uniform(vec![h, h], -0.05, 0.05, rng))
            .collect();
        let b = (0..4).map(|_| Tensor::zeros(vec![h])).collect();
        Self { w, u, b }
    }

    fn params(&self, dir: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, gate) in GATE_NAMES.iter().enumerate() {
            out.push((format!("encoder.{dir}.w_{gate}"), &self.w[k]));
            out.push((format!("encoder.{dir}.u_{gate}"), &self.u[k]));
            out.push((format!("encoder.{dir}.b_{gate}"), &self.b[k]));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for ((w, u), b) in self
            .w
            .iter_mut()
            .zip(self.u.iter_mut())
            .zip(self.b.iter_mut())
        {
            out.push(w);
            out.push(u);
            out.push(b);
        }
        out
    }

    fn register(&self, tape: &mut GradTape, flat: &mut Vec<Var>) -> LstmDirVars {
        let mut vars = LstmDirVars {
            w: Vec::new(),
            u: Vec::new(),
            b: Vec::new(),
        };
        for k in 0..4 {
            let w = tape.leaf(self.w[k].clone());
            let u = tape.leaf(self.u[k].clone());
            let b = tape.leaf(self.b[k].clone());
            vars.w.push(w);
            vars.u.push(u);
            vars.b.push(b);
            flat.extend([w, u, b]);
        }
        vars
    }
}

pub(crate) struct LstmDirVars {
    pub w: Vec<Var>,
    pub u: Vec<Var>,
    pub b: Vec<Var>,
}

/// Bidirectional LSTM encoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmEncoderParams {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

impl LstmEncoderParams {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            fwd: LstmDirParams::init(cfg, rng),
            bwd: LstmDirParams::init(cfg, rng),
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.fwd.params("fwd");
        out.extend(self.bwd.params("bwd"));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.fwd.params_mut();
        out.extend(self.bwd.params_mut());
        out
    }

    pub(crate) fn register(&self, tape: &mut GradTape) -> LstmVars {
        let mut flat = Vec::new();
        let fwd = self.fwd.register(tape, &mut flat);
        let bwd = self.bwd.register(tape, &mut flat);
        LstmVars { fwd, bwd, flat }
    }
}

pub(crate) struct LstmVars {
    pub fwd: LstmDirVars,
    pub bwd: LstmDirVars,
    pub flat: Vec<Var>,
}

/// Encoder selector shared by the pipeline models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncoderParams {
    Cnn(CnnEncoderParams),
    Lstm(LstmEncoderParams),
}

impl EncoderParams {
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            EncoderParams::Cnn(p) => p.params(),
            EncoderParams::Lstm(p) => p.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            EncoderParams::Cnn(p) => p.params_mut(),
            EncoderParams::Lstm(p) => p.params_mut(),
        }
    }

    /// Dimension of the encoder output vector.
    pub fn output_dim(&self, cfg: &ModelConfig) -> usize {
        match self {
            EncoderParams::Cnn(_) => cfg.filter_widths.len() * cfg.filters_per_width,
            EncoderParams::Lstm(_) => 2 * cfg.hidden,
        }
    }
}

pub(crate) enum EncoderVars {
    Cnn(CnnVars),
    Lstm(LstmVars),
}

impl EncoderVars {
    pub fn flat(&self) -> &[Var] {
        match self {
            EncoderVars::Cnn(v) => &v.flat,
            EncoderVars::Lstm(v) => &v.flat,
        }
    }
}

pub(crate) fn register_encoder(params: &EncoderParams, tape: &mut GradTape) -> EncoderVars {
    match params {
        EncoderParams::Cnn(p) => EncoderVars::Cnn(p.register(tape)),
        EncoderParams::Lstm(p) => EncoderVars::Lstm(p.register(tape)),
    }
}

// ── embedding binding ─────────────────────────────────────────────────────

/// Builds the `[L, D]` embedding matrix for a token sequence, right-padding
/// with zero rows up to `min_len`. The returned sources drive the gradient
/// scatter back into the table; padding rows are `Fixed` and never updated.
pub(crate) fn build_embed_matrix(
    tokens: &[String],
    table: &EmbeddingTable,
    min_len: usize,
) -> (Tensor, Vec<TokenSource>) {
    let dim = table.dim();
    let len = tokens.len().max(min_len);
    let mut data = Vec::with_capacity(len * dim);
    let mut sources = Vec::with_capacity(len);
    for token in tokens {
        match table.lookup(token) {
            TokenVec::Word { index, vector } => {
                data.extend_from_slice(&vector);
                sources.push(TokenSource::Word(index));
            }
            TokenVec::Subword { buckets, vector } => {
                data.extend_from_slice(&vector);
                sources.push(TokenSource::Buckets(buckets));
            }
            TokenVec::Hashed { vector } => {
                data.extend_from_slice(&vector);
                sources.push(TokenSource::Fixed);
            }
        }
    }
    for _ in tokens.len()..len {
        data.extend(std::iter::repeat_n(0.0, dim));
        sources.push(TokenSource::Fixed);
    }
    (Tensor::from_parts(vec![len, dim], data), sources)
}

// ── tape forwards ─────────────────────────────────────────────────────────

/// Convolution + ReLU + max-over-time per width, concatenated, then dropout
/// (no dropout after the embedding layer for the CNN).
pub(crate) fn cnn_encode_tape<R: Rng>(
    tape: &mut GradTape,
    embed: Var,
    vars: &CnnVars,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let mut pooled = Vec::new();
    for (i, &width) in cfg.filter_widths.iter().enumerate() {
        let windows = tape.unfold(embed, width)?;
        let conv = tape.matmul(windows, vars.filters[i])?;
        let conv = tape.add_row(conv, vars.biases[i])?;
        let act = tape.relu(conv)?;
        pooled.push(tape.col_max(act)?);
    }
    let v = tape.concat(&pooled)?;
    Ok(tape.dropout(v, cfg.dropout, mode, rng)?)
}

fn lstm_direction_tape(
    tape: &mut GradTape,
    rows: &[Var],
    reverse: bool,
    vars: &LstmDirVars,
    hidden: usize,
) -> Result<Var> {
    let mut h = tape.constant(Tensor::zeros(vec![hidden]));
    let mut c = tape.constant(Tensor::zeros(vec![hidden]));
    let order: Vec<usize> = if reverse {
        (0..rows.len()).rev().collect()
    } else {
        (0..rows.len()).collect()
    };
    for t in order {
        let x = rows[t];
        let mut gates = Vec::with_capacity(4);
        for k in 0..4 {
            let wx = tape.matvec(vars.w[k], x)?;
            let uh = tape.matvec(vars.u[k], h)?;
            let pre = tape.add(wx, uh)?;
            let pre = tape.add(pre, vars.b[k])?;
            gates.push(if k == 2 {
                tape.tanh(pre)?
            } else {
                tape.sigmoid(pre)?
            });
        }
        let keep = tape.mul(gates[1], c)?;
        let write = tape.mul(gates[0], gates[2])?;
        c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        h = tape.mul(gates[3], squashed)?;
    }
    Ok(h)
}

/// Dropout on the embeddings, a forward and a backward LSTM sweep, the two
/// final hidden states concatenated, dropout on the result.
pub(crate) fn lstm_encode_tape<R: Rng>(
    tape: &mut GradTape,
    embed: Var,
    vars: &LstmVars,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let dropped = tape.dropout(embed, cfg.dropout, mode, rng)?;
    let len = tape.value(dropped).rows();
    let rows: Vec<Var> = (0..len)
        .map(|t| tape.row(dropped, t))
        .collect::<crate::tensor::Result<_>>()?;
    let fwd = lstm_direction_tape(tape, &rows, false, &vars.fwd, cfg.hidden)?;
    let bwd = lstm_direction_tape(tape, &rows, true, &vars.bwd, cfg.hidden)?;
    let v = tape.concat(&[fwd, bwd])?;
    Ok(tape.dropout(v, cfg.dropout, mode, rng)?)
}

pub(crate) fn encode_tape<R: Rng>(
    tape: &mut GradTape,
    embed: Var,
    vars: &EncoderVars,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    match vars {
        EncoderVars::Cnn(v) => cnn_encode_tape(tape, embed, v, cfg, mode, rng),
        EncoderVars::Lstm(v) => lstm_encode_tape(tape, embed, v, cfg, mode, rng),
    }
}

/// Minimum padded document length for an encoder: the CNN needs at least as
/// many rows as its widest filter, the LSTM at least one step.
pub(crate) fn min_len(params: &EncoderParams, cfg: &ModelConfig) -> usize {
    match params {
        EncoderParams::Cnn(_) => cfg.filter_widths.iter().copied().max().unwrap_or(1),
        EncoderParams::Lstm(_) => 1,
    }
}

/// Standalone CNN document encoding (used directly by tests; training goes
/// through the taped forward).
pub fn cnn_encode<R: Rng>(
    tokens: &[String],
    params: &CnnEncoderParams,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    let mut tape = GradTape::new();
    let widest = cfg.filter_widths.iter().copied().max().unwrap_or(1);
    let (matrix, _) = build_embed_matrix(tokens, table, widest);
    let embed = tape.constant(matrix);
    let vars = params.register(&mut tape);
    let v = cnn_encode_tape(&mut tape, embed, &vars, cfg, mode, rng)?;
    Ok(tape.value(v).clone())
}

/// Standalone BiLSTM document encoding.
pub fn bilstm_encode<R: Rng>(
    tokens: &[String],
    params: &LstmEncoderParams,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    let mut tape = GradTape::new();
    let (matrix, _) = build_embed_matrix(tokens, table, 1);
    let embed = tape.constant(matrix);
    let vars = params.register(&mut tape);
    let v = lstm_encode_tape(&mut tape, embed, &vars, cfg, mode, rng)?;
    Ok(tape.value(v).clone())
}

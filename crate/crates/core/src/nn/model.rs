//! A small pre-norm transformer encoder with a tied masked-language-model head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{ParamId, ParamStore, Precision, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Dropout probability on attention and feed-forward outputs while training.
    pub dropout: f64,
    pub precision: Precision,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 128,
            vocab_size: 0,
            dropout: 0.0,
            precision: Precision::Double,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::validation(format!("model.{f}"), r));
        if self.d_model == 0 {
            return bad("d_model", "must be positive");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("n_heads", "must divide d_model");
        }
        if self.max_len == 0 {
            return bad("max_len", "must be positive");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn ff_width(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BlockParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct ParamLayout {
    token_embed: ParamId,
    pos_embed: ParamId,
    blocks: Vec<BlockParams>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_bias: ParamId,
}

/// Encoder parameters plus the tied output head.
///
/// Logits are `hidden · token_embedᵀ + head_bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmModel {
    config: ModelConfig,
    params: ParamStore,
    layout: ParamLayout,
}

/// Model parameters registered on a tape for one pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

impl MlmModel {
    /// Randomly initialized model: normal(0, init_std) matrices, unit
    /// layer-norm gains, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, 0x6d6f_6465_6c00);
        let std = config.init_std;
        Self::build(config, |r, c, init| match init {
            Init::Zeros => Tensor::zeros(r, c),
            Init::Ones => Tensor::filled(r, c, 1.0),
            Init::Normal => normal_tensor(&mut rng, r, c, std),
        })
    }

    /// Every parameter zero (including layer-norm gains).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Self::build(config, |r, c, _| Tensor::zeros(r, c))
    }

    fn build(
        config: ModelConfig,
        mut make: impl FnMut(usize, usize, Init) -> Tensor,
    ) -> Result<Self> {
        let d = config.d_model;
        let ff = config.ff_width();
        let mut p = ParamStore::new();
        let token_embed = p.insert("token_embed", make(config.vocab_size, d, Init::Normal));
        let pos_embed = p.insert("pos_embed", make(config.max_len, d, Init::Normal));
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let mut ins =
                |name: &str, r, c, init| p.insert(format!("blocks.{l}.{name}"), make(r, c, init));
            blocks.push(BlockParams {
                ln1_g: ins("ln1.gamma", 1, d, Init::Ones),
                ln1_b: ins("ln1.beta", 1, d, Init::Zeros),
                wq: ins("attn.wq", d, d, Init::Normal),
                bq: ins("attn.bq", 1, d, Init::Zeros),
                wk: ins("attn.wk", d, d, Init::Normal),
                bk: ins("attn.bk", 1, d, Init::Zeros),
                wv: ins("attn.wv", d, d, Init::Normal),
                bv: ins("attn.bv", 1, d, Init::Zeros),
                wo: ins("attn.wo", d, d, Init::Normal),
                bo: ins("attn.bo", 1, d, Init::Zeros),
                ln2_g: ins("ln2.gamma", 1, d, Init::Ones),
                ln2_b: ins("ln2.beta", 1, d, Init::Zeros),
                w1: ins("ff.w1", d, ff, Init::Normal),
                b1: ins("ff.b1", 1, ff, Init::Zeros),
                w2: ins("ff.w2", ff, d, Init::Normal),
                b2: ins("ff.b2", 1, d, Init::Zeros),
            });
        }
        let lnf_g = p.insert("lnf.gamma", make(1, d, Init::Ones));
        let lnf_b = p.insert("lnf.beta", make(1, d, Init::Zeros));
        let head_bias = p.insert("head_bias", make(1, config.vocab_size, Init::Zeros));
        Ok(MlmModel {
            config,
            params: p,
            layout: ParamLayout {
                token_embed,
                pos_embed,
                blocks,
                lnf_g,
                lnf_b,
                head_bias,
            },
        })
    }

    /// Rebuilds a model from named arrays, checking every shape against `config`.
    pub fn from_arrays(config: ModelConfig, arrays: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if arrays.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                model.params.len(),
                arrays.len()
            )));
        }
        for (name, value) in arrays {
            let id = model
                .params
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected array `{name}`")))?;
            let want = model.params.get(id).shape();
            if value.shape() != want {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` has shape {:?}, config requires {want:?}",
                    value.shape()
                )));
            }
            model.params.replace(id, value);
        }
        Ok(model)
    }

    pub fn to_arrays(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn token_embed_id(&self) -> ParamId {
        self.layout.token_embed
    }

    pub fn token_embed(&self) -> &Tensor {
        self.params.get(self.layout.token_embed)
    }

    pub fn token_embed_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.layout.token_embed)
    }

    /// Appends `extra` vocabulary rows: random embeddings, zero head bias.
    pub fn extend_vocab(&mut self, extra: usize, seed: u64) {
        let d = self.config.d_model;
        let mut rng = seeded(seed, 0x7669_7274);
        let old = self.params.get(self.layout.token_embed).clone();
        let mut data = old.into_data();
        let fresh = normal_tensor(&mut rng, extra, d, self.config.init_std.max(0.0));
        data.extend_from_slice(fresh.data());
        let rows = self.config.vocab_size + extra;
        self.params.replace(
            self.layout.token_embed,
            Tensor::from_vec(rows, d, data).expect("shape"),
        );
        let mut bias = self.params.get(self.layout.head_bias).clone().into_data();
        bias.extend(std::iter::repeat_n(0.0, extra));
        self.params
            .replace(self.layout.head_bias, Tensor::row_vector(bias));
        self.config.vocab_size = rows;
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .ids()
                .map(|id| tape.param(&self.params, id))
                .collect(),
        }
    }

    /// Encoder pass over `ids`; keys at positions `>= attention_length` are
    /// excluded from attention. Returns final hidden states `[ids.len() × d]`.
    ///
    /// `dropout` carries the generator for training-time dropout; `None`
    /// disables it regardless of the configured rate.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ids: &[usize],
        attention_length: usize,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        if ids.len() > cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence of {} tokens exceeds max_len {}",
                ids.len(),
                cfg.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(Error::Shape(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if attention_length == 0 || attention_length > ids.len() {
            return Err(Error::Shape(format!(
                "attention length {attention_length} for {} tokens",
                ids.len()
            )));
        }
        let l = &self.layout;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.gather_rows(bound.var(l.token_embed), ids)?;
        let pos = tape.gather_rows(bound.var(l.pos_embed), &positions)?;
        let mut x = tape.add(tok, pos)?;

        let heads = cfg.n_heads;
        let dh = cfg.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p_drop = cfg.dropout;
        for b in &l.blocks {
            let h = tape.layer_norm(x, bound.var(b.ln1_g), bound.var(b.ln1_b))?;
            let q = affine(tape, h, bound.var(b.wq), bound.var(b.bq))?;
            let k = affine(tape, h, bound.var(b.wk), bound.var(b.bk))?;
            let v = affine(tape, h, bound.var(b.wv), bound.var(b.bv))?;
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice_cols(q, hd * dh, dh)?;
                let kh = tape.slice_cols(k, hd * dh, dh)?;
                let vh = tape.slice_cols(v, hd * dh, dh)?;
                let scores = tape.matmul_bt(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows_prefix(scores, attention_length);
                outs.push(tape.matmul(attn, vh)?);
            }
            let cat = if heads == 1 {
                outs[0]
            } else {
                tape.concat_cols(&outs)?
            };
            let mut a = affine(tape, cat, bound.var(b.wo), bound.var(b.bo))?;
            if let Some(rng) = dropout.as_deref_mut() {
                a = apply_dropout(tape, a, p_drop, rng)?;
            }
            x = tape.add(x, a)?;

            let h = tape.layer_norm(x, bound.var(b.ln2_g), bound.var(b.ln2_b))?;
            let f = affine(tape, h, bound.var(b.w1), bound.var(b.b1))?;
            let f = tape.gelu(f);
            let mut f = affine(tape, f, bound.var(b.w2), bound.var(b.b2))?;
            if let Some(rng) = dropout.as_deref_mut() {
                f = apply_dropout(tape, f, p_drop, rng)?;
            }
            x = tape.add(x, f)?;
        }
        tape.layer_norm(x, bound.var(l.lnf_g), bound.var(l.lnf_b))
    }

    /// Tied-head logits for the given hidden rows: `[rows × vocab_size]`.
    pub fn head_logits(&self, tape: &mut Tape, bound: &Bound, hidden: Var) -> Result<Var> {
        let raw = tape.matmul_bt(hidden, bound.var(self.layout.token_embed))?;
        tape.add_row(raw, bound.var(self.layout.head_bias))
    }

    /// Full forward pass over a padded sequence.
    ///
    /// Returns `(hidden [len × d], logits [len × vocab_size])`. PAD positions are
    /// never attended to, so non-PAD rows do not depend on them.
    pub fn forward(&self, ids: &[usize], attention_length: usize) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::with_precision(self.config.precision);
        let bound = self.bind(&mut tape);
        let hidden = self.encode(&mut tape, &bound, ids, attention_length, None)?;
        let logits = self.head_logits(&mut tape, &bound, hidden)?;
        Ok((tape.value(hidden).clone(), tape.value(logits).clone()))
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn apply_dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    tape.mul_const(x, Tensor::from_vec(r, c, mask)?)
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    if std <= 0.0 {
        return Tensor::zeros(rows, cols);
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

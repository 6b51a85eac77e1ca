//! Initialization of virtual relation words.
//!
//! Every function returns a `[|Y|·m × d]` matrix with row `r·m + (j−1)` for
//! relation `r`, view `j`; [`write_virtual_rows`] copies it into the model.

use log::warn;
use serde::{Deserialize, Serialize};

use super::infer::mask_pass;
use super::schema::RelationSchema;
use crate::error::{Error, Result};
use crate::nn::{softmax_into, MlmModel, Tensor};
use crate::vocab::{encode_probe, Verbalizer, Vocab};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Mean embedding of label-derived words.
    Static,
    /// Embeddings of the model's top cloze predictions on probe templates.
    Dynamic,
    /// Average of static and dynamic.
    #[default]
    Combined,
    /// Keep the random rows the vocabulary extension created.
    Random,
}

/// One chosen initialization token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub relation: String,
    pub view: usize,
    pub token: String,
    pub probability: f64,
}

fn check_model(vocab: &Vocab, model: &MlmModel) -> Result<()> {
    if model.vocab_size() < vocab.base_size() {
        return Err(Error::Shape(format!(
            "model vocabulary {} smaller than base vocabulary {}",
            model.vocab_size(),
            vocab.base_size()
        )));
    }
    Ok(())
}

/// Each view of relation `r` starts at the mean embedding of `r`'s label
/// words. Unknown words are skipped with a warning.
pub fn static_init(
    schema: &RelationSchema,
    vocab: &Vocab,
    model: &MlmModel,
    m: usize,
) -> Result<Tensor> {
    check_model(vocab, model)?;
    let d = model.d_model();
    let emb = model.token_embed();
    let mut out = Tensor::zeros(schema.relations.len() * m, d);
    for (r, rel) in schema.relations.iter().enumerate() {
        let words = schema
            .si_tokens
            .get(rel)
            .map(Vec::as_slice)
            .unwrap_or_default();
        let mut ids = Vec::new();
        for w in words {
            match vocab.id(w).filter(|&id| vocab.is_plain(id)) {
                Some(id) => ids.push(id),
                None => warn!("label word `{w}` of `{rel}` is not in the vocabulary"),
            }
        }
        if ids.is_empty() {
            return Err(Error::Init {
                relation: rel.clone(),
                reason: "no label word is in the vocabulary".into(),
            });
        }
        let mut mean = vec![0.0; d];
        for &id in &ids {
            for (acc, v) in mean.iter_mut().zip(emb.row(id)) {
                *acc += v;
            }
        }
        let n = ids.len() as f64;
        for v in &mut mean {
            *v /= n;
        }
        for j in 0..m {
            out.row_mut(r * m + j).copy_from_slice(&mean);
        }
    }
    Ok(out)
}

/// Runs each relation's probe with `m` masks and takes, at mask `j`, the most
/// probable plain word (never a special or virtual token; ties go to the
/// lowest id).
pub fn dynamic_init(
    schema: &RelationSchema,
    vocab: &Vocab,
    model: &MlmModel,
    m: usize,
) -> Result<(Tensor, Vec<ProbeRecord>)> {
    check_model(vocab, model)?;
    let d = model.d_model();
    let emb = model.token_embed();
    let max_len = model.config().max_len;
    let mut out = Tensor::zeros(schema.relations.len() * m, d);
    let mut report = Vec::with_capacity(schema.relations.len() * m);
    for (r, rel) in schema.relations.iter().enumerate() {
        let template = schema.probe_template(rel)?;
        let prompt = encode_probe(template, vocab, m, max_len).map_err(|e| Error::Init {
            relation: rel.clone(),
            reason: e.to_string(),
        })?;
        let (_, logits) = mask_pass(model, &prompt)?;
        let mut probs = vec![0.0; logits.cols()];
        for j in 0..m {
            softmax_into(logits.row(j), &mut probs);
            let mut best: Option<usize> = None;
            for id in 0..vocab.base_size().min(probs.len()) {
                if vocab.is_plain(id) && best.is_none_or(|b| probs[id] > probs[b]) {
                    best = Some(id);
                }
            }
            let id = best.ok_or_else(|| Error::Init {
                relation: rel.clone(),
                reason: "vocabulary has no plain words".into(),
            })?;
            out.row_mut(r * m + j).copy_from_slice(emb.row(id));
            report.push(ProbeRecord {
                relation: rel.clone(),
                view: j + 1,
                token: vocab.word(id).unwrap_or_default().to_string(),
                probability: probs[id],
            });
        }
    }
    Ok((out, report))
}

/// `0.5·static + 0.5·dynamic`, plus the probe report.
pub fn combined_init(
    schema: &RelationSchema,
    vocab: &Vocab,
    model: &MlmModel,
    m: usize,
) -> Result<(Tensor, Vec<ProbeRecord>)> {
    let si = static_init(schema, vocab, model, m)?;
    let (di, report) = dynamic_init(schema, vocab, model, m)?;
    let mut out = si.clone();
    for (o, (a, b)) in out
        .data_mut()
        .iter_mut()
        .zip(si.data().iter().zip(di.data()))
    {
        *o = 0.5 * a + 0.5 * b;
    }
    Ok((out, report))
}

pub fn write_virtual_rows(
    model: &mut MlmModel,
    verbalizer: &Verbalizer,
    rows: &Tensor,
) -> Result<()> {
    let ids = verbalizer.ids();
    if rows.rows() != ids.len() || rows.cols() != model.d_model() {
        return Err(Error::Shape(format!(
            "{:?} initialization rows for {} virtual words",
            rows.shape(),
            ids.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= model.vocab_size()) {
        return Err(Error::Shape(format!(
            "virtual id {bad} outside the model vocabulary"
        )));
    }
    let emb = model.token_embed_mut();
    for (r, &id) in ids.iter().enumerate() {
        emb.row_mut(id).copy_from_slice(rows.row(r));
    }
    Ok(())
}

/// Applies `mode` to the model's virtual rows. Probe modes score the model
/// as it is before any row is written. Returns the probe report (empty for
/// static and random).
pub fn initialize(
    model: &mut MlmModel,
    schema: &RelationSchema,
    vocab: &Vocab,
    verbalizer: &Verbalizer,
    mode: InitMode,
) -> Result<Vec<ProbeRecord>> {
    let m = verbalizer.m();
    let (rows, report) = match mode {
        InitMode::Random => return Ok(Vec::new()),
        InitMode::Static => (static_init(schema, vocab, model, m)?, Vec::new()),
        InitMode::Dynamic => dynamic_init(schema, vocab, model, m)?,
        InitMode::Combined => combined_init(schema, vocab, model, m)?,
    };
    write_virtual_rows(model, verbalizer, &rows)?;
    Ok(report)
}

//! Multi-mask prompt templates.
//!
//! An instance is wrapped as
//!
//! ```text
//! [CLS] sentence-with-entity-markers [SEP] subj [MASK]×m obj [SEP] [PAD]..
//! ```
//!
//! with the subject and object swapped in the suffix under
//! [`EntityOrder::ObjSub`].

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Vocab, CLS, MASK, OBJ_CLOSE, OBJ_OPEN, PAD, SEP, SUB_CLOSE, SUB_OPEN};
use crate::data::{Dataset, RelationInstance};
use crate::error::{Error, Result};
use crate::nn::MlmCorpus;

/// Placeholder in probe templates expanded to `m` masks.
pub const MASK_PLACEHOLDER: &str = "[MASK]*m";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityOrder {
    #[default]
    SubObj,
    ObjSub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateOptions {
    pub m: usize,
    pub max_len: usize,
    pub order: EntityOrder,
    /// Wrap entity spans in the sentence with marker tokens.
    pub markers: bool,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        TemplateOptions {
            m: 1,
            max_len: 128,
            order: EntityOrder::SubObj,
            markers: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPrompt {
    /// Padded to the template's `max_len`.
    pub ids: Vec<usize>,
    pub mask_positions: Vec<usize>,
    /// Positions of the entity tokens inside the sentence part.
    pub subj_positions: Vec<usize>,
    pub obj_positions: Vec<usize>,
    pub attention_length: usize,
}

impl EncodedPrompt {
    /// The non-PAD prefix.
    pub fn active_ids(&self) -> &[usize] {
        &self.ids[..self.attention_length]
    }

    pub fn m(&self) -> usize {
        self.mask_positions.len()
    }
}

enum Middle<'a> {
    Masks(usize),
    Words(&'a [usize]),
}

fn span_distance(i: usize, (s, e): (usize, usize)) -> usize {
    if i < s {
        s - i
    } else {
        i.saturating_sub(e)
    }
}

fn build(
    inst: &RelationInstance,
    vocab: &Vocab,
    middle: Middle<'_>,
    opts: &TemplateOptions,
) -> Result<EncodedPrompt> {
    let (s, o) = (inst.subj_span, inst.obj_span);
    let subj_len = s.1 - s.0 + 1;
    let obj_len = o.1 - o.0 + 1;
    let middle_len = match middle {
        Middle::Masks(m) => m,
        Middle::Words(w) => w.len(),
    };
    let markers = if opts.markers { 4 } else { 0 };
    let fixed = 3 + markers + 2 * (subj_len + obj_len) + middle_len;
    if fixed > opts.max_len {
        return Err(Error::Encoding(format!(
            "entities and {middle_len} suffix slots need {fixed} positions, max_len is {}",
            opts.max_len
        )));
    }
    let n = inst.tokens.len();
    let room = opts.max_len - fixed + subj_len + obj_len;
    let mut keep = vec![true; n];
    if n > room {
        let mut outside: Vec<usize> = (0..n)
            .filter(|&i| span_distance(i, s) > 0 && span_distance(i, o) > 0)
            .collect();
        outside.sort_by_key(|&i| {
            let d = span_distance(i, s).min(span_distance(i, o));
            std::cmp::Reverse((d, i))
        });
        for &i in &outside[..n - room] {
            keep[i] = false;
        }
    }

    let mut ids = vec![CLS];
    let (mut subj_positions, mut obj_positions) = (Vec::new(), Vec::new());
    for (i, tok) in inst.tokens.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        if opts.markers && i == s.0 {
            ids.push(SUB_OPEN);
        }
        if opts.markers && i == o.0 {
            ids.push(OBJ_OPEN);
        }
        if (s.0..=s.1).contains(&i) {
            subj_positions.push(ids.len());
        } else if (o.0..=o.1).contains(&i) {
            obj_positions.push(ids.len());
        }
        ids.push(vocab.input_id(tok));
        if opts.markers && i == s.1 {
            ids.push(SUB_CLOSE);
        }
        if opts.markers && i == o.1 {
            ids.push(OBJ_CLOSE);
        }
    }
    ids.push(SEP);
    let subj: Vec<usize> = inst
        .subj_tokens()
        .iter()
        .map(|w| vocab.input_id(w))
        .collect();
    let obj: Vec<usize> = inst
        .obj_tokens()
        .iter()
        .map(|w| vocab.input_id(w))
        .collect();
    let (first, second) = match opts.order {
        EntityOrder::SubObj => (subj, obj),
        EntityOrder::ObjSub => (obj, subj),
    };
    ids.extend(first);
    let mut mask_positions = Vec::new();
    match middle {
        Middle::Masks(m) => {
            for _ in 0..m {
                mask_positions.push(ids.len());
                ids.push(MASK);
            }
        }
        Middle::Words(w) => ids.extend_from_slice(w),
    }
    ids.extend(second);
    ids.push(SEP);
    let attention_length = ids.len();
    ids.resize(opts.max_len, PAD);
    Ok(EncodedPrompt {
        ids,
        mask_positions,
        subj_positions,
        obj_positions,
        attention_length,
    })
}

/// Encodes `inst` with `opts.m` consecutive masks between the entities of
/// the suffix. Sentence tokens outside both spans are dropped, farthest from
/// the entities first, until the prompt fits `max_len`.
pub fn wrap_template(
    inst: &RelationInstance,
    vocab: &Vocab,
    opts: &TemplateOptions,
) -> Result<EncodedPrompt> {
    if opts.m == 0 {
        return Err(Error::validation("m", "must be at least 1"));
    }
    build(inst, vocab, Middle::Masks(opts.m), opts)
}

/// Sentence tokens recovered from a prompt: everything between CLS and the
/// first SEP except entity markers.
pub fn decode_sentence(prompt: &EncodedPrompt, vocab: &Vocab) -> Vec<String> {
    prompt
        .ids
        .iter()
        .skip(1)
        .take_while(|&&id| id != SEP)
        .filter(|&&id| !matches!(id, SUB_OPEN | SUB_CLOSE | OBJ_OPEN | OBJ_CLOSE))
        .map(|&id| vocab.word(id).unwrap_or("[UNK]").to_string())
        .collect()
}

/// Whitespace-split template words with the placeholder replaced by `m`
/// literal `[MASK]` words.
pub fn expand_template(template: &str, m: usize) -> Result<Vec<String>> {
    let n = template
        .split_whitespace()
        .filter(|w| *w == MASK_PLACEHOLDER)
        .count();
    if n != 1 {
        return Err(Error::validation(
            "probe_template",
            format!("`{template}` must contain `{MASK_PLACEHOLDER}` exactly once"),
        ));
    }
    let mut out = Vec::new();
    for w in template.split_whitespace() {
        if w == MASK_PLACEHOLDER {
            out.extend(std::iter::repeat_n("[MASK]".to_string(), m));
        } else {
            out.push(w.to_string());
        }
    }
    Ok(out)
}

/// `[CLS] template [SEP]` with the placeholder expanded; unknown words
/// become UNK with a warning.
pub fn encode_probe(
    template: &str,
    vocab: &Vocab,
    m: usize,
    max_len: usize,
) -> Result<EncodedPrompt> {
    if m == 0 {
        return Err(Error::validation("m", "must be at least 1"));
    }
    let words = expand_template(template, m)?;
    let mut ids = vec![CLS];
    let mut mask_positions = Vec::new();
    for w in &words {
        if w == "[MASK]" {
            mask_positions.push(ids.len());
            ids.push(MASK);
        } else {
            let id = vocab.input_id(w);
            if id == super::UNK {
                warn!("probe word `{w}` is not in the vocabulary");
            }
            ids.push(id);
        }
    }
    ids.push(SEP);
    if ids.len() > max_len {
        return Err(Error::Encoding(format!(
            "probe needs {} positions, max_len is {max_len}",
            ids.len()
        )));
    }
    let attention_length = ids.len();
    ids.resize(max_len, PAD);
    Ok(EncodedPrompt {
        ids,
        mask_positions,
        subj_positions: Vec::new(),
        obj_positions: Vec::new(),
        attention_length,
    })
}

/// Unpadded pretraining sequences. With `with_suffix`, each sentence is
/// followed by the template suffix whose slots hold the words actually
/// found between the two entities.
pub fn pretraining_sequences(
    ds: &Dataset,
    vocab: &Vocab,
    opts: &TemplateOptions,
    with_suffix: bool,
) -> Result<Vec<Vec<usize>>> {
    let plain = |inst: &RelationInstance| {
        let mut ids = vec![CLS];
        ids.extend(
            inst.tokens
                .iter()
                .take(opts.max_len.saturating_sub(2))
                .map(|w| vocab.input_id(w)),
        );
        ids.push(SEP);
        ids
    };
    let mut out = Vec::with_capacity(ds.len());
    for inst in &ds.instances {
        if !with_suffix {
            out.push(plain(inst));
            continue;
        }
        let (a, b) = (inst.subj_span, inst.obj_span);
        let (lo, hi) = if a.1 < b.0 {
            (a.1 + 1, b.0)
        } else {
            (b.1 + 1, a.0)
        };
        let between: Vec<usize> = inst.tokens[lo..hi]
            .iter()
            .map(|w| vocab.input_id(w))
            .collect();
        match build(inst, vocab, Middle::Words(&between), opts) {
            Ok(p) => out.push(p.active_ids().to_vec()),
            // A suffix too long for max_len falls back to the bare sentence.
            Err(Error::Encoding(_)) => out.push(plain(inst)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn mlm_corpus(
    train: &Dataset,
    heldout: &Dataset,
    vocab: &Vocab,
    opts: &TemplateOptions,
    with_suffix: bool,
) -> Result<MlmCorpus> {
    Ok(MlmCorpus {
        train: pretraining_sequences(train, vocab, opts, with_suffix)?,
        heldout: pretraining_sequences(heldout, vocab, opts, with_suffix)?,
        maskable: (0..vocab.base_size())
            .map(|id| vocab.is_plain(id))
            .collect(),
        mask_id: MASK,
    })
}

//! Word-level vocabulary, virtual relation words and prompt templates.

mod template;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, VIRTUAL_PREFIX};
use crate::error::{Error, Result};
use crate::mvre::RelationSchema;

pub use template::{
    decode_sentence, encode_probe, expand_template, mlm_corpus, pretraining_sequences,
    wrap_template, EncodedPrompt, EntityOrder, TemplateOptions, MASK_PLACEHOLDER,
};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const SUB_OPEN: usize = 4;
pub const SUB_CLOSE: usize = 5;
pub const OBJ_OPEN: usize = 6;
pub const OBJ_CLOSE: usize = 7;
pub const UNK: usize = 8;

pub const SPECIAL_WORDS: [&str; 9] = [
    "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[SUB]", "[/SUB]", "[OBJ]", "[/OBJ]", "[UNK]",
];

pub fn virtual_word(relation: &str, view: usize) -> String {
    format!("{VIRTUAL_PREFIX}{relation}:{view}]")
}

/// Bijective word ↔ id map. Ids `< base_size` are specials and corpus words;
/// ids `>= base_size` are virtual relation words.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    base_size: usize,
}

impl Vocab {
    /// Specials followed by every word type of `datasets`, sorted.
    pub fn from_datasets(datasets: &[&Dataset]) -> Vocab {
        let mut types = BTreeSet::new();
        for ds in datasets {
            for inst in &ds.instances {
                types.extend(inst.tokens.iter().map(String::as_str));
            }
        }
        let mut words: Vec<String> = SPECIAL_WORDS.iter().map(|w| w.to_string()).collect();
        words.extend(
            types
                .into_iter()
                .filter(|w| !SPECIAL_WORDS.contains(w))
                .map(str::to_string),
        );
        let base_size = words.len();
        Self::from_words(words, base_size).expect("sorted unique words")
    }

    pub fn from_words(words: Vec<String>, base_size: usize) -> Result<Vocab> {
        if base_size > words.len() || base_size < SPECIAL_WORDS.len() {
            return Err(Error::validation(
                "base_size",
                format!("{base_size} for {} words", words.len()),
            ));
        }
        if words[..SPECIAL_WORDS.len()] != SPECIAL_WORDS {
            return Err(Error::validation(
                "words",
                "must start with the special tokens",
            ));
        }
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::validation("words", format!("duplicate word `{w}`")));
            }
            let is_virtual = w.starts_with(VIRTUAL_PREFIX);
            if is_virtual != (i >= base_size) {
                return Err(Error::validation(
                    "words",
                    format!("`{w}` on the wrong side of base_size"),
                ));
            }
        }
        Ok(Vocab {
            words,
            ids,
            base_size,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_WORDS.len()
    }

    pub fn is_virtual(&self, id: usize) -> bool {
        id >= self.base_size
    }

    /// Ordinary words: neither special nor virtual.
    pub fn is_plain(&self, id: usize) -> bool {
        !self.is_special(id) && !self.is_virtual(id)
    }

    /// Input id for a sentence word. Unknown words, specials spelled out in
    /// text and virtual words all become UNK.
    pub fn input_id(&self, word: &str) -> usize {
        match self.id(word) {
            Some(id) if self.is_plain(id) => id,
            _ => UNK,
        }
    }

    /// The base part of this vocabulary extended by `m` virtual words per
    /// relation, in (relation, view) order.
    pub fn with_virtual(&self, relations: &[String], m: usize) -> Result<(Vocab, Verbalizer)> {
        if m == 0 {
            return Err(Error::validation("m", "must be at least 1"));
        }
        let mut words = self.words[..self.base_size].to_vec();
        let mut ids = Vec::with_capacity(relations.len() * m);
        for rel in relations {
            for j in 1..=m {
                ids.push(words.len());
                words.push(virtual_word(rel, j));
            }
        }
        let vocab = Vocab::from_words(words, self.base_size)?;
        Ok((
            vocab,
            Verbalizer {
                relation_order: relations.to_vec(),
                m,
                ids,
            },
        ))
    }
}

pub fn build_vocab(dataset: &Dataset, schema: &RelationSchema) -> Result<(Vocab, Verbalizer)> {
    Vocab::from_datasets(&[dataset]).with_virtual(&schema.relations, schema.m)
}

/// `v_j(y)`: the vocabulary id of view `j` of relation `y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    relation_order: Vec<String>,
    m: usize,
    ids: Vec<usize>,
}

impl Verbalizer {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn relations(&self) -> &[String] {
        &self.relation_order
    }

    pub fn n_relations(&self) -> usize {
        self.relation_order.len()
    }

    /// Id of view `view` (1-based) of relation index `relation`.
    pub fn virtual_id(&self, relation: usize, view: usize) -> Result<usize> {
        if view == 0 || view > self.m {
            return Err(Error::Index {
                index: view,
                len: self.m,
            });
        }
        if relation >= self.relation_order.len() {
            return Err(Error::Index {
                index: relation,
                len: self.relation_order.len(),
            });
        }
        Ok(self.ids[relation * self.m + view - 1])
    }

    /// All virtual ids, row `r·m + (j − 1)` for relation `r`, view `j`.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Ids of view `view` for every relation, in relation order.
    pub fn view_ids(&self, view: usize) -> Vec<usize> {
        (0..self.n_relations())
            .map(|r| self.ids[r * self.m + view - 1])
            .collect()
    }
}

/// Serialized form of a vocabulary and, optionally, its verbalizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabFile {
    pub words: Vec<String>,
    pub base_size: usize,
    pub m: usize,
    pub relation_order: Vec<String>,
}

impl VocabFile {
    pub fn new(vocab: &Vocab, verbalizer: Option<&Verbalizer>) -> VocabFile {
        VocabFile {
            words: vocab.words.clone(),
            base_size: vocab.base_size,
            m: verbalizer.map_or(0, Verbalizer::m),
            relation_order: verbalizer
                .map(|v| v.relation_order.clone())
                .unwrap_or_default(),
        }
    }

    /// Rebuilds both maps; the verbalizer is present when `m > 0`.
    pub fn into_parts(self) -> Result<(Vocab, Option<Verbalizer>)> {
        let vocab = Vocab::from_words(self.words, self.base_size)?;
        if self.m == 0 {
            if vocab.len() != vocab.base_size {
                return Err(Error::validation("m", "virtual words present but m = 0"));
            }
            return Ok((vocab, None));
        }
        let (rebuilt, verbalizer) = vocab.with_virtual(&self.relation_order, self.m)?;
        if rebuilt != vocab {
            return Err(Error::validation(
                "words",
                "virtual words do not match relation_order and m",
            ));
        }
        Ok((vocab, Some(verbalizer)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<VocabFile> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

//! Synthetic aspect-structured relation corpora.
//!
//! Every non-NA relation owns a private pool of words split into aspect
//! groups. A sentence of relation `r` reads
//!
//! ```text
//! fillers.. SUBJ a_1 a_2 .. a_g OBJ fillers.. .
//! ```
//!
//! with one word `a_i` drawn from each of `r`'s aspect groups, so the words
//! between the entities carry the relation and each position carries one
//! aspect. NA sentences place two entities among fillers only.
//!
//! Word forms, pools and relation names depend only on the `CorpusSpec`; the seed
//! drives sentence sampling, and with it the order of `Dataset::relations`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, RelationInstance};
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const NA_LABEL: &str = "no_relation";

/// Words every synthetic corpus contains so that label-derived tokens and
/// probe templates stay in-vocabulary.
pub const LITERAL_WORDS: [&str; 4] = ["subject", "object", "no", "relation"];
pub const SENTENCE_END: &str = ".";

const ASPECT_NAMES: [&str; 4] = ["time", "place", "person", "action"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_relations: usize,
    pub instances_per_relation: usize,
    pub aspects_per_relation: usize,
    /// Aspect words per relation, spread over its aspect groups.
    pub vocab_pool_size: usize,
    pub sentence_length_range: (usize, usize),
    pub na_fraction: f64,
    pub filler_pool_size: usize,
    pub entity_pool_size: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_relations: 8,
            instances_per_relation: 50,
            aspects_per_relation: 4,
            vocab_pool_size: 24,
            sentence_length_range: (10, 18),
            na_fraction: 0.0,
            filler_pool_size: 60,
            entity_pool_size: 80,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_relations", self.n_relations),
            ("instances_per_relation", self.instances_per_relation),
            ("aspects_per_relation", self.aspects_per_relation),
            ("vocab_pool_size", self.vocab_pool_size),
            ("filler_pool_size", self.filler_pool_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        if self.vocab_pool_size < self.aspects_per_relation {
            return Err(Error::validation(
                "vocab_pool_size",
                "needs at least one word per aspect group",
            ));
        }
        if self.entity_pool_size < 4 {
            return Err(Error::validation("entity_pool_size", "must be at least 4"));
        }
        if !(0.0..1.0).contains(&self.na_fraction) {
            return Err(Error::validation("na_fraction", "must lie in [0, 1)"));
        }
        let (lo, hi) = self.sentence_length_range;
        if lo < 6 || hi < lo {
            return Err(Error::validation(
                "sentence_length_range",
                "need 6 <= min <= max",
            ));
        }
        Ok(())
    }

    pub fn na_count(&self) -> usize {
        let f = self.na_fraction;
        if f == 0.0 {
            return 0;
        }
        let base = (self.n_relations * self.instances_per_relation) as f64;
        (base * f / (1.0 - f)).round() as usize
    }
}

/// Word pools behind a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectLayout {
    pub aspect_names: Vec<String>,
    pub relations: Vec<RelationPools>,
    pub fillers: Vec<String>,
    pub entities: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPools {
    pub relation: String,
    /// `groups[g]` holds the relation's words for aspect `g`.
    pub groups: Vec<Vec<String>>,
}

impl AspectLayout {
    /// Aspect name → the union of every relation's words for that aspect.
    pub fn aspect_word_sets(&self) -> Vec<(String, Vec<String>)> {
        self.aspect_names
            .iter()
            .enumerate()
            .map(|(g, name)| {
                let words = self
                    .relations
                    .iter()
                    .flat_map(|r| r.groups[g].iter().cloned())
                    .collect();
                (name.clone(), words)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub layout: AspectLayout,
}

/// Pronounceable three-syllable words; `stride` is coprime with the
/// syllable space so consecutive indices look unrelated.
struct WordForge {
    next: u64,
}

impl WordForge {
    const CONSONANTS: &'static [u8] = b"bdfgklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";
    const STRIDE: u64 = 7919;

    fn word(&mut self) -> String {
        let space = (Self::CONSONANTS.len() * Self::VOWELS.len()) as u64;
        let total = space * space * space;
        let mut code = (self.next * Self::STRIDE) % total;
        self.next += 1;
        let mut s = String::with_capacity(6);
        for _ in 0..3 {
            let syl = (code % space) as usize;
            code /= space;
            s.push(Self::CONSONANTS[syl / Self::VOWELS.len()] as char);
            s.push(Self::VOWELS[syl % Self::VOWELS.len()] as char);
        }
        s
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

fn build_layout(spec: &CorpusSpec) -> AspectLayout {
    let mut forge = WordForge { next: 0 };
    let mut fillers: Vec<String> = LITERAL_WORDS.iter().map(|w| w.to_string()).collect();
    fillers.extend(forge.words(spec.filler_pool_size));
    let entities = forge.words(spec.entity_pool_size);
    let groups_n = spec.aspects_per_relation;
    let relations = (0..spec.n_relations)
        .map(|_| {
            let pool = forge.words(spec.vocab_pool_size);
            let mut groups = vec![Vec::new(); groups_n];
            for (i, w) in pool.into_iter().enumerate() {
                groups[i % groups_n].push(w);
            }
            let parts: Vec<&str> = groups.iter().take(3).map(|g| g[0].as_str()).collect();
            let relation = match parts.as_slice() {
                [a] => a.to_string(),
                [a, b] => format!("{a}:{b}"),
                [a, b, c, ..] => format!("{a}:{b}_{c}"),
                [] => unreachable!("at least one aspect group"),
            };
            RelationPools { relation, groups }
        })
        .collect();
    let aspect_names = (0..groups_n)
        .map(|g| {
            ASPECT_NAMES
                .get(g)
                .map_or_else(|| format!("aspect{g}"), |s| s.to_string())
        })
        .collect();
    AspectLayout {
        aspect_names,
        relations,
        fillers,
        entities,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [String]) -> &'a str {
    &pool[rng.random_range(0..pool.len())]
}

fn entity_pair(rng: &mut ChaCha8Rng, entities: &[String]) -> (Vec<String>, Vec<String>) {
    let n_s = rng.random_range(1..=2);
    let n_o = rng.random_range(1..=2);
    let chosen: Vec<String> = entities.choose_multiple(rng, n_s + n_o).cloned().collect();
    (chosen[..n_s].to_vec(), chosen[n_s..].to_vec())
}

fn assemble(
    rng: &mut ChaCha8Rng,
    spec: &CorpusSpec,
    fillers: &[String],
    core: Vec<String>,
    subj_len: usize,
    obj_len: usize,
    label: &str,
) -> RelationInstance {
    let (lo, hi) = spec.sentence_length_range;
    let target = rng.random_range(lo..=hi);
    let room = target.saturating_sub(core.len() + 1);
    let before = rng.random_range(0..=room);
    let mut tokens: Vec<String> = (0..before)
        .map(|_| pick(rng, fillers).to_string())
        .collect();
    let subj_start = tokens.len();
    let core_len = core.len();
    tokens.extend(core);
    let obj_end = subj_start + core_len - 1;
    tokens.extend((0..room - before).map(|_| pick(rng, fillers).to_string()));
    tokens.push(SENTENCE_END.to_string());
    RelationInstance {
        tokens,
        subj_span: (subj_start, subj_start + subj_len - 1),
        obj_span: (obj_end + 1 - obj_len, obj_end),
        label: label.to_string(),
    }
}

pub fn generate_corpus_with_layout(spec: &CorpusSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let layout = build_layout(spec);
    let mut instances = Vec::new();
    for (ri, rel) in layout.relations.iter().enumerate() {
        let mut rng = seeded(seed, 0x7265_6c00 + ri as u64);
        for _ in 0..spec.instances_per_relation {
            let (subj, obj) = entity_pair(&mut rng, &layout.entities);
            let (ls, lo) = (subj.len(), obj.len());
            let mut core = subj;
            for group in &rel.groups {
                core.push(pick(&mut rng, group).to_string());
            }
            core.extend(obj);
            instances.push(assemble(
                &mut rng,
                spec,
                &layout.fillers,
                core,
                ls,
                lo,
                &rel.relation,
            ));
        }
    }
    let na = spec.na_count();
    let na_label = (spec.na_fraction > 0.0).then(|| NA_LABEL.to_string());
    let mut rng = seeded(seed, 0x6e61_0000);
    for _ in 0..na {
        let (subj, obj) = entity_pair(&mut rng, &layout.entities);
        let (ls, lo) = (subj.len(), obj.len());
        let gap = rng.random_range(1..=3);
        let mut core = subj;
        core.extend((0..gap).map(|_| pick(&mut rng, &layout.fillers).to_string()));
        core.extend(obj);
        instances.push(assemble(
            &mut rng,
            spec,
            &layout.fillers,
            core,
            ls,
            lo,
            NA_LABEL,
        ));
    }
    instances.shuffle(&mut seeded(seed, 0x7368_7566));
    // First-appearance order, the order a reload from JSONL recovers.
    let dataset = Dataset::from_instances(instances, na_label)?;
    Ok(SyntheticCorpus { dataset, layout })
}

pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Dataset> {
    generate_corpus_with_layout(spec, seed).map(|c| c.dataset)
}

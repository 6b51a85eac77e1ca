//! Relation-extraction datasets.

mod jsonl;
mod sample;
mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{load_jsonl, save_jsonl};
pub use sample::{sample_kshot, split_dataset, SplitFractions};
pub use synthetic::{
    generate_corpus, generate_corpus_with_layout, AspectLayout, CorpusSpec, SyntheticCorpus,
};

/// Prefix reserved for virtual relation words.
pub const VIRTUAL_PREFIX: &str = "[V:";

/// One labeled example. Spans are inclusive `(start, end)` token indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub tokens: Vec<String>,
    pub subj_span: (usize, usize),
    pub obj_span: (usize, usize),
    pub label: String,
}

impl RelationInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for (name, (s, e)) in [("subj_span", self.subj_span), ("obj_span", self.obj_span)] {
            if s > e || e >= n {
                return Err(Error::validation(
                    name,
                    format!("({s},{e}) invalid for {n} tokens"),
                ));
            }
        }
        let (a, b) = (self.subj_span, self.obj_span);
        if a.0 <= b.1 && b.0 <= a.1 {
            return Err(Error::validation("obj_span", "overlaps subj_span"));
        }
        if let Some(t) = self.tokens.iter().find(|t| t.starts_with(VIRTUAL_PREFIX)) {
            return Err(Error::validation("tokens", format!("reserved word `{t}`")));
        }
        if let Some(i) = self
            .tokens
            .iter()
            .position(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::validation(
                "tokens",
                format!("token {i} is empty or contains whitespace"),
            ));
        }
        Ok(())
    }

    pub fn subj_tokens(&self) -> &[String] {
        &self.tokens[self.subj_span.0..=self.subj_span.1]
    }

    pub fn obj_tokens(&self) -> &[String] {
        &self.tokens[self.obj_span.0..=self.obj_span.1]
    }
}

/// Instances plus the ordered relation set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<RelationInstance>,
    pub relations: Vec<String>,
    pub na_label: Option<String>,
}

impl Dataset {
    /// Builds a dataset, checking instance invariants and label membership.
    pub fn new(
        instances: Vec<RelationInstance>,
        relations: Vec<String>,
        na_label: Option<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            instances,
            relations,
            na_label,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Collects the relation set in first-appearance order.
    pub fn from_instances(
        instances: Vec<RelationInstance>,
        na_label: Option<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut relations = Vec::new();
        for inst in &instances {
            if seen.insert(inst.label.as_str()) {
                relations.push(inst.label.clone());
            }
        }
        Self::new(instances, relations, na_label)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.relations {
            if !seen.insert(r.as_str()) {
                return Err(Error::validation(
                    "relations",
                    format!("duplicate relation `{r}`"),
                ));
            }
        }
        for (i, inst) in self.instances.iter().enumerate() {
            inst.validate()
                .map_err(|e| Error::validation(format!("instances[{i}]"), e.to_string()))?;
            if !seen.contains(inst.label.as_str()) {
                return Err(Error::validation(
                    format!("instances[{i}].label"),
                    format!("`{}` not in relation set", inst.label),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn relation_index(&self, label: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == label)
    }

    /// Same relation set, different instances.
    pub fn with_instances(&self, instances: Vec<RelationInstance>) -> Dataset {
        Dataset {
            instances,
            relations: self.relations.clone(),
            na_label: self.na_label.clone(),
        }
    }
}

/// Train / dev / test partition of one corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

/// A k-shot training set with its evaluation splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub k: usize,
    pub seed: u64,
}

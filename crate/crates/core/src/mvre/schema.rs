use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vocab::{EntityOrder, MASK_PLACEHOLDER};

/// Relation set, view count, and the per-relation material used for
/// initializing virtual words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSchema {
    pub relations: Vec<String>,
    pub m: usize,
    #[serde(default)]
    pub na_label: Option<String>,
    pub probe_templates: BTreeMap<String, String>,
    pub si_tokens: BTreeMap<String, Vec<String>>,
    /// Relations whose probe reads object before subject. Missing entries
    /// mean `sub_obj`.
    #[serde(default)]
    pub direction: BTreeMap<String, EntityOrder>,
}

/// Label words for static initialization: any `(e1,e2)`/`(e2,e1)` suffix is
/// removed, the rest is split on `:` `_` `-` `/`, lowercased, and pieces made
/// only of punctuation are dropped.
pub fn split_label(label: &str) -> Vec<String> {
    let core = strip_direction(label).0;
    core.split([':', '_', '-', '/'])
        .map(str::to_lowercase)
        .filter(|p| !p.is_empty() && !p.chars().all(|c| c.is_ascii_punctuation()))
        .collect()
}

fn strip_direction(label: &str) -> (&str, Option<EntityOrder>) {
    if let Some(core) = label.strip_suffix("(e2,e1)") {
        (core, Some(EntityOrder::ObjSub))
    } else if let Some(core) = label.strip_suffix("(e1,e2)") {
        (core, Some(EntityOrder::SubObj))
    } else {
        (label, None)
    }
}

/// `subject <words> object . subject [MASK]*m object .`, with the second
/// clause reversed for `obj_sub` relations.
pub fn default_probe_template(words: &[String], order: EntityOrder) -> String {
    let (a, b) = match order {
        EntityOrder::SubObj => ("subject", "object"),
        EntityOrder::ObjSub => ("object", "subject"),
    };
    format!(
        "subject {} object . {a} {MASK_PLACEHOLDER} {b} .",
        words.join(" ")
    )
}

impl RelationSchema {
    /// Schema with label-derived words and default probe templates. Labels
    /// ending in `(e2,e1)` get the reversed direction.
    pub fn from_relations(relations: &[String], na_label: Option<&str>, m: usize) -> Result<Self> {
        let mut probe_templates = BTreeMap::new();
        let mut si_tokens = BTreeMap::new();
        let mut direction = BTreeMap::new();
        for rel in relations {
            let mut words = split_label(rel);
            if words.is_empty() {
                words.push(rel.to_lowercase());
            }
            let order = strip_direction(rel).1.unwrap_or_default();
            if order == EntityOrder::ObjSub {
                direction.insert(rel.clone(), order);
            }
            probe_templates.insert(rel.clone(), default_probe_template(&words, order));
            si_tokens.insert(rel.clone(), words);
        }
        let schema = RelationSchema {
            relations: relations.to_vec(),
            m,
            na_label: na_label.map(str::to_string),
            probe_templates,
            si_tokens,
            direction,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_dataset(ds: &Dataset, m: usize) -> Result<Self> {
        Self::from_relations(&ds.relations, ds.na_label.as_deref(), m)
    }

    pub fn with_m(&self, m: usize) -> Result<Self> {
        let s = RelationSchema { m, ..self.clone() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::validation("m", "must be at least 1"));
        }
        if self.relations.is_empty() {
            return Err(Error::validation("relations", "empty relation set"));
        }
        for rel in &self.relations {
            match self.probe_templates.get(rel) {
                None => {
                    return Err(Error::validation(
                        "probe_templates",
                        format!("no template for `{rel}`"),
                    ))
                }
                Some(t)
                    if t.split_whitespace()
                        .filter(|w| *w == MASK_PLACEHOLDER)
                        .count()
                        != 1 =>
                {
                    return Err(Error::validation(
                        "probe_templates",
                        format!("template for `{rel}` must contain `{MASK_PLACEHOLDER}` once"),
                    ))
                }
                Some(t) if t.split_whitespace().any(|w| w == "[MASK]") => {
                    return Err(Error::validation(
                        "probe_templates",
                        format!("template for `{rel}` has a bare `[MASK]`"),
                    ))
                }
                Some(_) => {}
            }
            if self.si_tokens.get(rel).is_none_or(Vec::is_empty) {
                return Err(Error::validation(
                    "si_tokens",
                    format!("no label words for `{rel}`"),
                ));
            }
        }
        if let Some(na) = &self.na_label {
            if !self.relations.contains(na) {
                return Err(Error::validation(
                    "na_label",
                    format!("`{na}` is not a relation"),
                ));
            }
        }
        Ok(())
    }

    pub fn direction_of(&self, relation: &str) -> EntityOrder {
        self.direction.get(relation).copied().unwrap_or_default()
    }

    /// The relation's probe template, placeholder unexpanded.
    pub fn probe_template(&self, relation: &str) -> Result<&str> {
        self.probe_templates
            .get(relation)
            .map(String::as_str)
            .ok_or_else(|| Error::Init {
                relation: relation.to_string(),
                reason: "no probe template".into(),
            })
    }

    pub fn na_index(&self) -> Option<usize> {
        let na = self.na_label.as_ref()?;
        self.relations.iter().position(|r| r == na)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: RelationSchema = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_splitting() {
        assert_eq!(split_label("org:founded_by"), ["org", "founded", "by"]);
        assert_eq!(
            split_label("per:country_of_birth"),
            ["per", "country", "of", "birth"]
        );
        assert_eq!(split_label("Cause-Effect(e2,e1)"), ["cause", "effect"]);
        assert_eq!(split_label("a/-/b"), ["a", "b"]);
        assert_eq!(split_label("no_relation"), ["no", "relation"]);
    }

    #[test]
    fn reversed_relations_get_reversed_probe() {
        let rels = vec![
            "Cause-Effect(e1,e2)".to_string(),
            "Cause-Effect(e2,e1)".to_string(),
        ];
        let s = RelationSchema::from_relations(&rels, None, 3).unwrap();
        assert_eq!(s.direction_of(&rels[0]), EntityOrder::SubObj);
        assert_eq!(s.direction_of(&rels[1]), EntityOrder::ObjSub);
        assert_eq!(
            s.probe_template(&rels[1]).unwrap(),
            "subject cause effect object . object [MASK]*m subject ."
        );
    }

    #[test]
    fn validation_catches_missing_pieces() {
        let mut s = RelationSchema::from_relations(&["r".into()], None, 2).unwrap();
        s.probe_templates
            .insert("r".into(), "subject object .".into());
        assert!(s.validate().is_err());
        let mut s = RelationSchema::from_relations(&["r".into()], None, 2).unwrap();
        s.si_tokens.insert("r".into(), vec![]);
        assert!(s.validate().is_err());
        assert!(RelationSchema::from_relations(&["r".into()], None, 0).is_err());
        assert!(RelationSchema::from_relations(&["r".into()], Some("x"), 1).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let s = RelationSchema::from_relations(
            &["a:b".into(), "no_relation".into()],
            Some("no_relation"),
            2,
        )
        .unwrap();
        let back: RelationSchema =
            serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.na_index(), Some(1));
    }
}

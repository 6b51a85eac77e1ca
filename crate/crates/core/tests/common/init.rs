//! Probe-based initialization on random toys.

use super::{relations, toy, ToySpec};
use mvre::mvre::{dynamic_init, RelationSchema};

/// Label words `w{i} w{i+1}` and probe `w{i} w2 [MASK]*m w{i+3} .` for
/// relation `i`.
pub fn schema_for(n_rel: usize, m: usize) -> RelationSchema {
    let mut s = RelationSchema::from_relations(&relations(n_rel), None, m).unwrap();
    for (i, rel) in relations(n_rel).iter().enumerate() {
        s.si_tokens
            .insert(rel.clone(), vec![format!("w{i}"), format!("w{}", i + 1)]);
        s.probe_templates
            .insert(rel.clone(), format!("w{i} w2 [MASK]*m w{} .", i + 3));
    }
    s
}

/// Boosts every special and virtual embedding by `1 + boost`, then checks
/// that dynamic initialization still picks plain words only and reports one
/// record per (relation, view) whose row is the chosen embedding.
pub fn dynamic_init_check(
    seed: u64,
    n_rel: usize,
    m: usize,
    boost: f64,
    init_std: f64,
) -> Result<(), String> {
    let spec = ToySpec {
        n_plain: 8,
        n_rel,
        m,
        d: 8,
        heads: 2,
        layers: 1,
        max_len: 24,
        init_std,
    };
    let mut t = toy(&spec, seed);
    let non_plain: Vec<usize> = (0..t.vocab.len())
        .filter(|&i| !t.vocab.is_plain(i))
        .collect();
    for id in non_plain {
        for v in t.model.token_embed_mut().row_mut(id) {
            *v *= 1.0 + boost;
        }
    }
    let schema = schema_for(n_rel, m);
    let (rows, report) = dynamic_init(&schema, &t.vocab, &t.model, m).map_err(|e| e.to_string())?;
    if rows.shape() != (n_rel * m, 8) || report.len() != n_rel * m {
        return Err(format!(
            "shape {:?}, {} records",
            rows.shape(),
            report.len()
        ));
    }
    for (i, rec) in report.iter().enumerate() {
        let id = t
            .vocab
            .id(&rec.token)
            .ok_or_else(|| format!("unknown token {}", rec.token))?;
        if !t.vocab.is_plain(id) {
            return Err(format!("picked {}", rec.token));
        }
        if rec.view != i % m + 1 || !(rec.probability > 0.0 && rec.probability <= 1.0) {
            return Err(format!("record {i}: {rec:?}"));
        }
        if rows.row(i) != t.model.token_embed().row(id) {
            return Err(format!("row {i} is not the embedding of {}", rec.token));
        }
    }
    Ok(())
}
